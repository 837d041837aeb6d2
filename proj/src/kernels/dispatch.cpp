#include <cstdlib>
#include <string>

#include "kernels_internal.hpp"

namespace scdmd::kernels {
namespace {

const KernelTable* select_default() {
  if (const char* env = std::getenv("SCDMD_KERNELS")) {
    const std::string choice(env);
    if (choice == "scalar") return &detail::kScalarTable;
    if (choice == "avx2" && avx2_table() && cpu_has_avx2()) return avx2_table();
  }
  if (avx2_table() && cpu_has_avx2()) return avx2_table();
  return &detail::kScalarTable;
}

const KernelTable*& slot() {
  static const KernelTable* table = select_default();
  return table;
}

}  // namespace

const KernelTable& scalar_table() { return detail::kScalarTable; }

const KernelTable* avx2_table() {
#if defined(SCDMD_HAVE_AVX2)
  return &detail::kAvx2Table;
#else
  return nullptr;
#endif
}

bool cpu_has_avx2() {
#if defined(__GNUC__) && (defined(__x86_64__) || defined(__i386__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const KernelTable& active() { return *slot(); }

void set_active(Isa isa) {
  if (isa == Isa::kAvx2 && avx2_table() && cpu_has_avx2()) {
    slot() = avx2_table();
  } else {
    slot() = &detail::kScalarTable;
  }
}

std::string_view isa_name(Isa isa) {
  return isa == Isa::kAvx2 ? "avx2" : "scalar";
}

}  // namespace scdmd::kernels
