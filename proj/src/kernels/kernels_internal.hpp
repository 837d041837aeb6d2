#pragma once

#include "scdmd/kernels.hpp"

namespace scdmd::kernels::detail {

extern const KernelTable kScalarTable;

#if defined(SCDMD_HAVE_AVX2)
extern const KernelTable kAvx2Table;
#endif

}  // namespace scdmd::kernels::detail
