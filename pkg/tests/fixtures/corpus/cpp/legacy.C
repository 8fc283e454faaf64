// Old-style C++ file with an upper-case extension.
#include <mpi.h>

class Comm {
public:
    void barrier() { MPI_Barrier(comm_); }  // @expect Barrier
    void sum(double* x) { MPI_Allreduce(MPI_IN_PLACE, x, 1, MPI_DOUBLE, MPI_SUM, comm_); }  // @expect Allreduce
private:
    MPI_Comm comm_;
};
