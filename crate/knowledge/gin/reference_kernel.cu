__global__ void a2a_gin(ncclDevComm devComm, ncclWindow_t sendWin, ncclWindow_t recvWin,
                        size_t bytes_per_peer, int nranks, int rank) {
  ncclGin gin(devComm, 0);
  ncclCoopCta cta;
  for (int peer = 0; peer < nranks; ++peer) {
    gin.put(cta, ncclTeamWorld(devComm), peer, recvWin, rank * bytes_per_peer,
            sendWin, peer * bytes_per_peer, bytes_per_peer, ncclGin_SignalInc{0});
  }
  gin.flush(cta);
  gin.waitSignal(cta, 0, nranks);
}
