#ifndef INFDIFF_INFDIFF_HPP
#define INFDIFF_INFDIFF_HPP

#include "bench.hpp"
#include "config.hpp"
#include "denoiser.hpp"
#include "grid.hpp"
#include "oracle.hpp"
#include "parallel.hpp"
#include "pipeline.hpp"
#include "raster.hpp"
#include "rng.hpp"
#include "sampler.hpp"
#include "tensor.hpp"
#include "tensorstore.hpp"
#include "transforms.hpp"
#include "verify.hpp"

#endif
