#ifndef MMFP_HPP
#define MMFP_HPP

#include "mmfp/types.hpp"
#include "mmfp/sparse.hpp"
#include "mmfp/matrix_market.hpp"
#include "mmfp/problems.hpp"
#include "mmfp/wavelet.hpp"
#include "mmfp/wspai.hpp"
#include "mmfp/mmf.hpp"
#include "mmfp/krylov.hpp"
#include "mmfp/precondition.hpp"
#include "mmfp/bench.hpp"

#endif
