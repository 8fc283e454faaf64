#pragma once
#include <mpi.h>
/* MPI_Bcast(ptr, n, MPI_BYTE, 0, comm) would need a host copy */
inline void share(void* p, int n, MPI_Comm c) {
    MPI_Bcast(p, n, MPI_BYTE, 0, c);  // @expect Bcast
}
