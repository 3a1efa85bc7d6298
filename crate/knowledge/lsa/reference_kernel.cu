__global__ void a2a_lsa(ncclDevComm devComm, ncclWindow_t sendWin, ncclWindow_t recvWin,
                        size_t bytes_per_peer, int nranks, int rank) {
  ncclLsaBarrierSession<ncclCoopCta> bar(ncclCoopCta(), devComm, ncclTeamTagLsa(), blockIdx.x);
  bar.sync(ncclCoopCta(), cuda::memory_order_relaxed);
  const char* src = (const char*)ncclGetLsaPointer(sendWin, 0, rank);
  for (int peer = 0; peer < nranks; ++peer) {
    char* dst = (char*)ncclGetLsaPointer(recvWin, rank * bytes_per_peer, peer);
    for (size_t i = threadIdx.x; i < bytes_per_peer; i += blockDim.x) dst[i] = src[peer * bytes_per_peer + i];
  }
  bar.sync(ncclCoopCta(), cuda::memory_order_release);
}
