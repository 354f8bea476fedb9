#pragma once

// Cached encoder passes shared between the training code paths. The cache
// layout is private to encoder.cpp; callers hold an opaque handle.

#include <memory>
#include <vector>

#include "codesearch/encoder.hpp"

namespace codesearch::internal {

struct EncoderPassImpl;

struct EncoderPass {
  EncoderPass();
  ~EncoderPass();
  EncoderPass(EncoderPass&&) noexcept;
  EncoderPass& operator=(EncoderPass&&) noexcept;
  std::unique_ptr<EncoderPassImpl> impl;
};

/// Forward pass that records the activations backward needs.
Mat encoder_forward_cached(const EncoderWeights& w, const std::vector<int>& ids,
                           const std::vector<uint8_t>& mask,
                           const std::vector<int>* segment_ids, bool train_mode,
                           Rng* dropout_rng, EncoderPass& pass);

/// Accumulates parameter gradients for d(loss)/d(output) = dout.
void encoder_backward_cached(const EncoderWeights& w, const EncoderPass& pass,
                             Mat dout, EncoderWeights& grads);

}  // namespace codesearch::internal
