#include <mpi.h>
#include <string>
#include <vector>

// Gathers partial residuals; see MPI_Gatherv docs.
namespace solver {

const std::string doc = R"doc(
  MPI_Gather(...) is documented here but never called.
  "quotes" inside raw strings are fine
)doc";

double residual(std::vector<double>& r, MPI_Comm comm)
{
    std::vector<int> counts(4), displs(4);
    int n = static_cast<int>(r.size());
    MPI_Gather(&n, 1, MPI_INT, counts.data(), 1, MPI_INT, 0, comm); // @expect Gather
    MPI_Gatherv(r.data(), n, MPI_DOUBLE, nullptr, counts.data(), displs.data(), // @expect Gatherv
                MPI_DOUBLE, 0, comm);
    long big = 1'000'000; MPI_Bcast(&big, 1, MPI_LONG, 0, comm); // @expect Bcast
    return 0.0;
}

}  // namespace solver
