#pragma once
// Umbrella header.

#include "sam/analysis.hpp"
#include "sam/autodiff.hpp"
#include "sam/checkpoint.hpp"
#include "sam/config.hpp"
#include "sam/editing.hpp"
#include "sam/encoder.hpp"
#include "sam/evaluation.hpp"
#include "sam/generator.hpp"
#include "sam/image.hpp"
#include "sam/losses.hpp"
#include "sam/nn.hpp"
#include "sam/optimizer.hpp"
#include "sam/oracles.hpp"
#include "sam/pipeline.hpp"
#include "sam/rng.hpp"
#include "sam/tensor.hpp"
#include "sam/training.hpp"
