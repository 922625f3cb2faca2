#include <atomic>
#include <cstdlib>
#include <string>

#include "dlrgrid/errors.hpp"
#include "dlrgrid/kernels.hpp"

namespace dlrgrid::kernels {

#if defined(DLRGRID_HAVE_AVX2)
const KernelTable& avx2_kernels();
#endif

namespace {

bool cpu_has_avx2() {
#if defined(DLRGRID_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

Isa detect() {
  if (const char* forced = std::getenv("DLRGRID_ISA")) {
    if (std::string(forced) == "scalar") return Isa::Scalar;
  }
  return cpu_has_avx2() ? Isa::Avx2 : Isa::Scalar;
}

std::atomic<Isa>& current() {
  static std::atomic<Isa> isa{detect()};
  return isa;
}

}  // namespace

const KernelTable* avx2_table() {
#if defined(DLRGRID_HAVE_AVX2)
  static const KernelTable* table = cpu_has_avx2() ? &avx2_kernels() : nullptr;
  return table;
#else
  return nullptr;
#endif
}

bool isa_available(Isa isa) { return isa == Isa::Scalar || avx2_table() != nullptr; }

Isa active_isa() { return current().load(std::memory_order_relaxed); }

void set_active_isa(Isa isa) {
  if (!isa_available(isa)) {
    throw InvalidArgument("kernel ISA " + std::string(isa_name(isa)) + " is not available");
  }
  current().store(isa, std::memory_order_relaxed);
}

std::string_view isa_name(Isa isa) { return isa == Isa::Avx2 ? "avx2" : "scalar"; }

const KernelTable& active() {
  if (active_isa() == Isa::Avx2) return *avx2_table();
  return scalar_table();
}

}  // namespace dlrgrid::kernels
