#pragma once

// Umbrella header. Eigen comes first: httplib.h must not precede it.
#include <Eigen/Dense>

#include "matpal/error.hpp"
#include "matpal/rng.hpp"
#include "matpal/hashing.hpp"
#include "matpal/image.hpp"
#include "matpal/png_io.hpp"
#include "matpal/svbrdf.hpp"
#include "matpal/patterns.hpp"
#include "matpal/tiling.hpp"
#include "matpal/regions.hpp"
#include "matpal/nn.hpp"
#include "matpal/decomposition.hpp"
#include "matpal/datasets.hpp"
#include "matpal/metrics.hpp"
#include "matpal/synthesis.hpp"
#include "matpal/pipeline.hpp"
#include "matpal/run_config.hpp"
#include "matpal/service.hpp"
