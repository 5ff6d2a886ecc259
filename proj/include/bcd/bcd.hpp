#pragma once

#include "bcd/tensor.hpp"
#include "bcd/autodiff.hpp"
#include "bcd/ops.hpp"
#include "bcd/finite_diff.hpp"
#include "bcd/bitplane.hpp"
#include "bcd/image_io.hpp"
#include "bcd/nn_layers.hpp"
#include "bcd/gated_units.hpp"
#include "bcd/codec_config.hpp"
#include "bcd/codec.hpp"
#include "bcd/entropy_coder.hpp"
#include "bcd/container.hpp"
#include "bcd/model_io.hpp"
#include "bcd/metrics.hpp"
#include "bcd/optimizer.hpp"
#include "bcd/training.hpp"
#include "bcd/config_file.hpp"
