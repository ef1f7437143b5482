#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "mice/numcore.hpp"

namespace mice {

/// y = weight * x + bias, weight stored out x in.
struct Affine {
  Matrix weight;
  Vector bias;

  friend bool operator==(const Affine&, const Affine&) = default;
};

struct EncoderShape {
  std::size_t input_dim = 0;
  std::vector<std::size_t> hidden;  // tanh trunk widths, may be empty
  std::size_t embed_dim = 0;
  std::size_t num_heads = 0;  // expert heads (K)

  std::size_t trunk_output_dim() const { return hidden.empty() ? input_dim : hidden.back(); }

  friend bool operator==(const EncoderShape&, const EncoderShape&) = default;
};

struct ParamTag {};
struct GradTag {};

/// Shared tanh trunk, K expert heads and one gating head. The same layout
/// holds parameters and their gradients; the tag keeps the two apart.
template <class Tag>
struct Network {
  std::vector<Affine> trunk;
  std::vector<Affine> expert_heads;
  Affine gating_head;

  static Network zeros(const EncoderShape& shape);

  EncoderShape shape() const;

  /// Flat views in canonical order: trunk (weight, bias)..., expert heads
  /// (weight, bias)..., gating (weight, bias).
  std::vector<std::span<double>> tensors();
  std::vector<std::span<const double>> tensors() const;

  std::size_t parameter_count() const;

  friend bool operator==(const Network&, const Network&) = default;
};

using EncoderParams = Network<ParamTag>;
using GradientBundle = Network<GradTag>;

extern template struct Network<ParamTag>;
extern template struct Network<GradTag>;

/// Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)] for weights and biases.
EncoderParams init_encoder(const EncoderShape& shape, Rng& rng);

/// EMA copy of the student trunk and expert heads. Never receives gradients.
struct TeacherParams {
  std::vector<Affine> trunk;
  std::vector<Affine> expert_heads;

  static TeacherParams copy_of(const EncoderParams& student);

  std::vector<std::span<double>> tensors();
  std::vector<std::span<const double>> tensors() const;

  friend bool operator==(const TeacherParams&, const TeacherParams&) = default;
};

/// Activations saved by a forward pass.
struct Tape {
  enum class Kind { kExperts, kGating };

  Kind kind = Kind::kExperts;
  EncoderShape shape;
  Vector input;
  std::vector<Vector> hidden;  // post-tanh activation of every trunk layer
  Matrix raw;                  // head outputs before normalization
  Vector norms;                // |raw row|
  Matrix output;               // unit rows
};

struct StudentForward {
  Matrix embeddings;  // K x d, unit rows
  Tape tape;
};

struct GatingForward {
  Vector embedding;  // d, unit norm
  Tape tape;
};

StudentForward forward_student(std::span<const double> x, const EncoderParams& params);
Matrix forward_teacher(std::span<const double> x, const TeacherParams& params);
GatingForward forward_gating(std::span<const double> x, const EncoderParams& params);

/// Reverse-mode pass. upstream holds dL/d(embedding) with one row per head
/// of the tape (K rows for expert tapes, one row for gating tapes).
GradientBundle backward(const Tape& tape, const Matrix& upstream, const EncoderParams& params);

/// Same as backward, accumulating into grads.
void backward_into(const Tape& tape, const Matrix& upstream, const EncoderParams& params,
                   GradientBundle& grads);

/// teacher <- m * teacher + (1 - m) * student (trunk and expert heads).
void ema_update(TeacherParams& teacher, const EncoderParams& student, double momentum);

struct AugmentConfig {
  double noise = 0.0;    // Gaussian sigma
  double dropout = 0.0;  // per-coordinate zeroing probability, in [0, 1)

  friend bool operator==(const AugmentConfig&, const AugmentConfig&) = default;
};

/// x + noise * N(0, I), then each coordinate zeroed with probability dropout.
Vector augment(std::span<const double> x, Rng& rng, const AugmentConfig& cfg);

}  // namespace mice
