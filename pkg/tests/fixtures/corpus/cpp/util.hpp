#pragma once
#include <mpi.h>

template <typename T>
T global_max(T v, MPI_Comm c)
{
    T out{};
    MPI_Allreduce(&v, &out, 1, mpi_type<T>(), MPI_MAX, c);  // @expect Allreduce
    return out;  /* MPI_Allreduce above */
}

template <typename T>
void broadcast(T& v, MPI_Comm c) { MPI_Bcast(&v, 1, mpi_type<T>(), 0, c); }  // @expect Bcast
