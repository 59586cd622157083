#pragma once

#include "bioattn/attention.hpp"
#include "bioattn/autodiff.hpp"
#include "bioattn/ecology.hpp"
#include "bioattn/error.hpp"
#include "bioattn/experiment.hpp"
#include "bioattn/fft.hpp"
#include "bioattn/metrics.hpp"
#include "bioattn/ops.hpp"
#include "bioattn/recon.hpp"
#include "bioattn/tensor.hpp"
#include "bioattn/tensor_io.hpp"

namespace bioattn {
inline constexpr const char* kVersion = "0.1.0";
}
