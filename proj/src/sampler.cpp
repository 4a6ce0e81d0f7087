// Copyright 2026 The mmpaint Authors
// SPDX-License-Identifier: Apache-2.0

#include "mmpaint/sampler.hpp"

#include <cmath>

namespace mmpaint {

NoiseSchedule NoiseSchedule::scaled_linear(int train_timesteps, double beta_start, double beta_end) {
  if (train_timesteps < 1) throw InvalidInput("train_timesteps must be >= 1");
  NoiseSchedule s;
  s.train_timesteps = train_timesteps;
  s.alphas_cumprod.resize(static_cast<std::size_t>(train_timesteps));
  const double a = std::sqrt(beta_start), b = std::sqrt(beta_end);
  double prod = 1.0;
  for (int i = 0; i < train_timesteps; ++i) {
    const double r = train_timesteps == 1 ? a : a + (b - a) * i / (train_timesteps - 1);
    prod *= 1.0 - r * r;
    s.alphas_cumprod[static_cast<std::size_t>(i)] = prod;
  }
  return s;
}

double NoiseSchedule::alpha_bar(int t) const {
  if (t < 0) return 1.0;
  if (t >= train_timesteps) throw InvalidInput("timestep " + std::to_string(t) + " out of range");
  return alphas_cumprod[static_cast<std::size_t>(t)];
}

MatrixF add_noise(const NoiseSchedule& schedule, const MatrixF& x0, const MatrixF& noise, int t) {
  const double ab = schedule.alpha_bar(t);
  return static_cast<float>(std::sqrt(ab)) * x0 + static_cast<float>(std::sqrt(1 - ab)) * noise;
}

std::string to_string(SamplerScheme scheme) {
  return scheme == SamplerScheme::training_scheme ? "training_scheme" : "inference_scheme";
}

SamplerScheme sampler_scheme_from_string(const std::string& s) {
  if (s == "training_scheme" || s == "ddpm") return SamplerScheme::training_scheme;
  if (s == "inference_scheme" || s == "pndm") return SamplerScheme::inference_scheme;
  throw InvalidInput("unknown sampler scheme '" + s + "'");
}

namespace {

std::vector<int> leading_timesteps(int train_timesteps, int steps, int& stride) {
  if (steps < 1 || steps > train_timesteps) throw InvalidInput("sampler steps must be in [1, T]");
  stride = train_timesteps / steps;
  std::vector<int> ts;
  for (int i = steps - 1; i >= 0; --i) ts.push_back(i * stride + 1 > train_timesteps - 1 ? train_timesteps - 1 : i * stride + 1);
  return ts;
}

}  // namespace

void DdpmSampler::set_timesteps(int steps) { timesteps_ = leading_timesteps(schedule_.train_timesteps, steps, stride_); }

MatrixF DdpmSampler::step(const MatrixF& eps, int t, const MatrixF& sample, Rng& rng) {
  const int prev_t = t - stride_;
  const double ab = schedule_.alpha_bar(t);
  const double ab_prev = schedule_.alpha_bar(prev_t);
  const double alpha = ab / ab_prev;
  const double beta = 1 - alpha;
  const MatrixF x0 = (sample - static_cast<float>(std::sqrt(1 - ab)) * eps) / static_cast<float>(std::sqrt(ab));
  const double c0 = std::sqrt(ab_prev) * beta / (1 - ab);
  const double ct = std::sqrt(alpha) * (1 - ab_prev) / (1 - ab);
  MatrixF prev = static_cast<float>(c0) * x0 + static_cast<float>(ct) * sample;
  if (prev_t >= 0) {
    const double variance = std::max((1 - ab_prev) / (1 - ab) * beta, 1e-20);
    const float sd = static_cast<float>(std::sqrt(variance));
    for (Eigen::Index i = 0; i < prev.size(); ++i) prev.data()[i] += sd * static_cast<float>(rng.normal());
  }
  return prev;
}

void PndmSampler::set_timesteps(int steps) {
  const auto base = leading_timesteps(schedule_.train_timesteps, steps, stride_);
  timesteps_ = base;
  if (base.size() > 1) timesteps_.insert(timesteps_.begin() + 1, base[1]);
  ets_.clear();
  cur_sample_.resize(0, 0);
  counter_ = 0;
}

MatrixF PndmSampler::previous_sample(const MatrixF& sample, int t, int prev_t, const MatrixF& eps) const {
  const double ab = schedule_.alpha_bar(t);
  const double ab_prev = schedule_.alpha_bar(prev_t);
  const double sample_coeff = std::sqrt(ab_prev / ab);
  const double denom = ab * std::sqrt(1 - ab_prev) + std::sqrt(ab * (1 - ab) * ab_prev);
  return static_cast<float>(sample_coeff) * sample - static_cast<float>((ab_prev - ab) / denom) * eps;
}

MatrixF PndmSampler::step(const MatrixF& eps, int t, const MatrixF& sample, Rng&) {
  if (timesteps_.empty()) throw std::logic_error("PndmSampler::set_timesteps was not called");
  int prev_t = t - stride_;
  if (counter_ != 1) {
    while (ets_.size() > 3) ets_.pop_front();
    ets_.push_back(eps);
  } else {
    prev_t = t;
    t = t + stride_;
  }
  MatrixF e;
  MatrixF x = sample;
  if (ets_.size() == 1 && counter_ == 0) {
    e = eps;
    cur_sample_ = sample;
  } else if (ets_.size() == 1 && counter_ == 1) {
    e = (eps + ets_[0]) / 2.0f;
    x = cur_sample_;
    cur_sample_.resize(0, 0);
  } else if (ets_.size() == 2) {
    e = (3.0f * ets_[1] - ets_[0]) / 2.0f;
  } else if (ets_.size() == 3) {
    e = (23.0f * ets_[2] - 16.0f * ets_[1] + 5.0f * ets_[0]) / 12.0f;
  } else {
    e = (55.0f * ets_[3] - 59.0f * ets_[2] + 37.0f * ets_[1] - 9.0f * ets_[0]) / 24.0f;
  }
  ++counter_;
  return previous_sample(x, t, prev_t, e);
}

std::unique_ptr<Sampler> make_sampler(SamplerScheme scheme, const NoiseSchedule& schedule) {
  if (scheme == SamplerScheme::training_scheme) return std::make_unique<DdpmSampler>(schedule);
  return std::make_unique<PndmSampler>(schedule);
}

}  // namespace mmpaint
