#pragma once

#include <cstddef>
#include <string_view>

// Data-parallel inner loops behind Matrix and the autodiff tape. Each kernel
// has a scalar reference implementation and, on x86-64, an AVX2/FMA variant.
// The variant is chosen once at startup from CPUID; DLRGRID_ISA=scalar in the
// environment forces the reference path.

namespace dlrgrid::kernels {

enum class Isa { Scalar, Avx2 };

struct KernelTable {
  // C[m x n] (+)= A[m x k] * B[k x n]
  void (*gemm_nn)(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
                  double* c, bool accumulate);
  // C[k x n] (+)= A[m x k]^T * B[m x n]
  void (*gemm_tn)(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
                  double* c, bool accumulate);
  // C[m x k] (+)= A[m x n] * B[k x n]^T
  void (*gemm_nt)(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
                  double* c, bool accumulate);
  // y += alpha * x
  void (*axpy)(std::size_t n, double alpha, const double* x, double* y);
  double (*dot)(std::size_t n, const double* x, const double* y);
  // y += a .* b
  void (*hadamard_acc)(std::size_t n, const double* a, const double* b, double* y);
  // y = a .* b
  void (*hadamard)(std::size_t n, const double* a, const double* b, double* y);
};

const KernelTable& scalar_table();
/// Null when the build or the CPU lacks AVX2/FMA.
const KernelTable* avx2_table();

bool isa_available(Isa isa);
Isa active_isa();
/// Overrides the dispatch choice; throws InvalidArgument if the ISA is unavailable.
void set_active_isa(Isa isa);
std::string_view isa_name(Isa isa);

const KernelTable& active();

}  // namespace dlrgrid::kernels
