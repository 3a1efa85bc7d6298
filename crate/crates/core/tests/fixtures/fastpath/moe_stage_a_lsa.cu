void run_moe(int rank, int nranks, ncclComm_t comm) {
  cudaStream_t stream;
  cudaStreamCreate(&stream);

  // --- Buffers (symmetric, registered as communication windows) ---
  int8_t *d_quant_send, *d_quant_recv;
  float  *d_expert_out, *d_final_out;
  ncclMemAlloc((void**)&d_quant_send, chunk_bytes);
  ncclMemAlloc((void**)&d_quant_recv, chunk_bytes);
  ncclMemAlloc((void**)&d_expert_out, out_bytes);
  ncclMemAlloc((void**)&d_final_out,  out_bytes);
  ncclWindow_t w_quant_send, w_quant_recv, w_expert_out, w_final_out;
  ncclCommWindowRegister(comm, d_quant_send, chunk_bytes, &w_quant_send, NCCL_WIN_COLL_SYMMETRIC);
  ncclCommWindowRegister(comm, d_quant_recv, chunk_bytes, &w_quant_recv, NCCL_WIN_COLL_SYMMETRIC);
  ncclCommWindowRegister(comm, d_expert_out, out_bytes, &w_expert_out, NCCL_WIN_COLL_SYMMETRIC);
  ncclCommWindowRegister(comm, d_final_out,  out_bytes, &w_final_out, NCCL_WIN_COLL_SYMMETRIC);

  // --- Device communicator: one LSA barrier per CTA ---
  ncclDevCommRequirements reqs = NCCL_DEV_COMM_REQUIREMENTS_INITIALIZER;
  reqs.lsaBarrierCount = 1;
  ncclDevComm devComm;
  ncclDevCommCreate(comm, &reqs, &devComm);

  // --- Quantize tokens ---
  quantize<<<grid, block, 0, stream>>>(
      d_input, d_quant_send, d_scales, num_tokens, HIDDEN);

  // --- Dispatch: host-driven AlltoAll (int8) ---
  ncclAlltoAll(d_quant_send, d_quant_recv,
               chunk_elems, ncclInt8, comm, stream);
  cudaStreamSynchronize(stream);

  // --- Expert compute ---
  dequantize<<<grid, block, 0, stream>>>(
      d_quant_recv, d_deq, d_scales, num_tokens, HIDDEN);
  gemm<<<grid, block, 0, stream>>>(
      d_deq, d_W1, d_gemm1, tokens, GEMM1_DIM, HIDDEN);
  swiGLU<<<grid, block, 0, stream>>>(
      d_gemm1, d_swiglu, tokens, INTER_DIM);
  gemm<<<grid, block, 0, stream>>>(
      d_swiglu, d_W2, d_expert_out, tokens, HIDDEN, INTER_DIM);

  // --- Combine: host-driven AlltoAll (float) ---
  ncclAlltoAll(d_expert_out, d_final_out,
               chunk_elems, ncclFloat, comm, stream);
  cudaStreamSynchronize(stream);
}
