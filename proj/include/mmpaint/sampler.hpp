// Copyright 2026 The mmpaint Authors
// SPDX-License-Identifier: Apache-2.0

// Diffusion noise schedule plus the two sampling schemes: ancestral DDPM
// (the training-time scheme) and pseudo linear multistep PNDM (inference).

#pragma once

#include <deque>
#include <memory>
#include <string>
#include <vector>

#include "mmpaint/random.hpp"
#include "mmpaint/types.hpp"

namespace mmpaint {

struct NoiseSchedule {
  int train_timesteps = 1000;
  std::vector<double> alphas_cumprod;

  /// Scaled-linear betas between beta_start and beta_end.
  static NoiseSchedule scaled_linear(int train_timesteps = 1000, double beta_start = 0.00085,
                                     double beta_end = 0.012);

  double alpha_bar(int t) const;
};

/// sqrt(abar_t) x0 + sqrt(1 - abar_t) noise, for t in [0, T).
MatrixF add_noise(const NoiseSchedule& schedule, const MatrixF& x0, const MatrixF& noise, int t);

enum class SamplerScheme { training_scheme, inference_scheme };

std::string to_string(SamplerScheme scheme);
SamplerScheme sampler_scheme_from_string(const std::string& s);

class Sampler {
 public:
  virtual ~Sampler() = default;
  virtual void set_timesteps(int steps) = 0;
  virtual const std::vector<int>& timesteps() const = 0;
  /// Advances `sample` by one step given the noise prediction at `t`.
  virtual MatrixF step(const MatrixF& eps, int t, const MatrixF& sample, Rng& rng) = 0;
};

class DdpmSampler : public Sampler {
 public:
  explicit DdpmSampler(NoiseSchedule schedule) : schedule_(std::move(schedule)) {}
  void set_timesteps(int steps) override;
  const std::vector<int>& timesteps() const override { return timesteps_; }
  MatrixF step(const MatrixF& eps, int t, const MatrixF& sample, Rng& rng) override;

 private:
  NoiseSchedule schedule_;
  std::vector<int> timesteps_;
  int stride_ = 1;
};

/// PLMS variant with Runge-Kutta warmup skipped: the first timestep repeats
/// once, and up to four past noise predictions are combined.
class PndmSampler : public Sampler {
 public:
  explicit PndmSampler(NoiseSchedule schedule) : schedule_(std::move(schedule)) {}
  void set_timesteps(int steps) override;
  const std::vector<int>& timesteps() const override { return timesteps_; }
  MatrixF step(const MatrixF& eps, int t, const MatrixF& sample, Rng& rng) override;

 private:
  MatrixF previous_sample(const MatrixF& sample, int t, int prev_t, const MatrixF& eps) const;

  NoiseSchedule schedule_;
  std::vector<int> timesteps_;
  int stride_ = 1;
  std::deque<MatrixF> ets_;
  MatrixF cur_sample_;
  int counter_ = 0;
};

std::unique_ptr<Sampler> make_sampler(SamplerScheme scheme, const NoiseSchedule& schedule);

}  // namespace mmpaint
