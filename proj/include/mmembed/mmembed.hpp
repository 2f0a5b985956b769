// SPDX-License-Identifier: Apache-2.0
//
// Umbrella header.
#ifndef MMEMBED_MMEMBED_HPP_
#define MMEMBED_MMEMBED_HPP_

#include "mmembed/checkpoint.hpp"
#include "mmembed/errors.hpp"
#include "mmembed/evaluator.hpp"
#include "mmembed/features.hpp"
#include "mmembed/gradcheck.hpp"
#include "mmembed/miner.hpp"
#include "mmembed/model.hpp"
#include "mmembed/objective.hpp"
#include "mmembed/parallel.hpp"
#include "mmembed/rng.hpp"
#include "mmembed/sampled_softmax.hpp"
#include "mmembed/stemmer.hpp"
#include "mmembed/synthetic.hpp"
#include "mmembed/tensor.hpp"
#include "mmembed/text.hpp"
#include "mmembed/trainer.hpp"
#include "mmembed/triplets.hpp"

#endif  // MMEMBED_MMEMBED_HPP_
