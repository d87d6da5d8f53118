#pragma once

namespace dram {

#ifdef DRAM_SINGLE_PRECISION
using Scalar = float;
#else
using Scalar = double;
#endif

}  // namespace dram
