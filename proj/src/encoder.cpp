#include "mice/encoder.hpp"

#include <cmath>
#include <string>

namespace mice {

namespace {

Affine zero_affine(std::size_t out, std::size_t in) { return Affine{Matrix(out, in), Vector(out, 0.0)}; }

Affine random_affine(std::size_t out, std::size_t in, Rng& rng) {
  Affine layer = zero_affine(out, in);
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  for (double& w : layer.weight.values()) w = rng.uniform(-bound, bound);
  for (double& b : layer.bias) b = rng.uniform(-bound, bound);
  return layer;
}

void apply(const Affine& layer, std::span<const double> x, std::span<double> y) {
  const std::size_t in = layer.weight.cols();
  for (std::size_t r = 0; r < layer.weight.rows(); ++r) {
    const double* w = layer.weight.row(r).data();
    double sum = layer.bias[r];
    for (std::size_t c = 0; c < in; ++c) sum += w[c] * x[c];
    y[r] = sum;
  }
}

// grads += delta * input^T; returns W^T delta into back (when non-empty).
void accumulate_affine(const Affine& layer, std::span<const double> input, std::span<const double> delta,
                       Affine& grad, std::span<double> back) {
  const std::size_t in = layer.weight.cols();
  for (std::size_t r = 0; r < layer.weight.rows(); ++r) {
    const double d = delta[r];
    if (d == 0.0) continue;
    double* gw = grad.weight.row(r).data();
    const double* w = layer.weight.row(r).data();
    for (std::size_t c = 0; c < in; ++c) gw[c] += d * input[c];
    grad.bias[r] += d;
    if (!back.empty()) {
      for (std::size_t c = 0; c < in; ++c) back[c] += w[c] * d;
    }
  }
}

void push_tensors(std::vector<std::span<double>>& out, Affine& layer) {
  out.push_back(layer.weight.values());
  out.push_back(layer.bias);
}

void push_tensors(std::vector<std::span<const double>>& out, const Affine& layer) {
  out.push_back(layer.weight.values());
  out.push_back(layer.bias);
}

void check_input(std::span<const double> x, std::size_t expected) {
  if (x.size() != expected) {
    throw Error(ErrorCode::kDimensionMismatch,
                "encoder input has length " + std::to_string(x.size()) + ", expected " + std::to_string(expected));
  }
}

// Runs the tanh trunk, recording activations in tape->hidden when given.
Vector run_trunk(const std::vector<Affine>& trunk, std::span<const double> x, Tape* tape) {
  Vector h(x.begin(), x.end());
  for (const Affine& layer : trunk) {
    Vector next(layer.weight.rows());
    apply(layer, h, next);
    for (double& v : next) v = std::tanh(v);
    h = std::move(next);
    if (tape != nullptr) tape->hidden.push_back(h);
  }
  return h;
}

void normalize_head(std::span<const double> raw, std::span<double> out, double& norm) {
  double sq = 0.0;
  for (double v : raw) sq += v * v;
  norm = std::sqrt(sq);
  if (!(norm > kNormEpsilon)) throw Error(ErrorCode::kZeroNorm, "encoder head output has zero norm");
  for (std::size_t i = 0; i < raw.size(); ++i) out[i] = raw[i] / norm;
}

Matrix run_heads(std::span<const Affine> heads, std::span<const double> h, Tape* tape) {
  const std::size_t d = heads.front().weight.rows();
  Matrix raw(heads.size(), d);
  Matrix out(heads.size(), d);
  Vector norms(heads.size());
  for (std::size_t k = 0; k < heads.size(); ++k) {
    apply(heads[k], h, raw.row(k));
    normalize_head(raw.row(k), out.row(k), norms[k]);
  }
  if (tape != nullptr) {
    tape->raw = std::move(raw);
    tape->norms = std::move(norms);
    tape->output = out;
  }
  return out;
}

}  // namespace

template <class Tag>
Network<Tag> Network<Tag>::zeros(const EncoderShape& shape) {
  Network net;
  std::size_t in = shape.input_dim;
  for (std::size_t width : shape.hidden) {
    net.trunk.push_back(zero_affine(width, in));
    in = width;
  }
  for (std::size_t k = 0; k < shape.num_heads; ++k) net.expert_heads.push_back(zero_affine(shape.embed_dim, in));
  net.gating_head = zero_affine(shape.embed_dim, in);
  return net;
}

template <class Tag>
EncoderShape Network<Tag>::shape() const {
  EncoderShape s;
  s.input_dim = trunk.empty() ? gating_head.weight.cols() : trunk.front().weight.cols();
  for (const Affine& layer : trunk) s.hidden.push_back(layer.weight.rows());
  s.embed_dim = gating_head.weight.rows();
  s.num_heads = expert_heads.size();
  return s;
}

template <class Tag>
std::vector<std::span<double>> Network<Tag>::tensors() {
  std::vector<std::span<double>> out;
  for (Affine& layer : trunk) push_tensors(out, layer);
  for (Affine& layer : expert_heads) push_tensors(out, layer);
  push_tensors(out, gating_head);
  return out;
}

template <class Tag>
std::vector<std::span<const double>> Network<Tag>::tensors() const {
  std::vector<std::span<const double>> out;
  for (const Affine& layer : trunk) push_tensors(out, layer);
  for (const Affine& layer : expert_heads) push_tensors(out, layer);
  push_tensors(out, gating_head);
  return out;
}

template <class Tag>
std::size_t Network<Tag>::parameter_count() const {
  std::size_t n = 0;
  for (auto t : tensors()) n += t.size();
  return n;
}

template struct Network<ParamTag>;
template struct Network<GradTag>;

EncoderParams init_encoder(const EncoderShape& shape, Rng& rng) {
  if (shape.input_dim == 0 || shape.embed_dim == 0 || shape.num_heads == 0) {
    throw Error(ErrorCode::kInvalidInput, "encoder dimensions must be positive");
  }
  EncoderParams net;
  std::size_t in = shape.input_dim;
  for (std::size_t width : shape.hidden) {
    net.trunk.push_back(random_affine(width, in, rng));
    in = width;
  }
  for (std::size_t k = 0; k < shape.num_heads; ++k) net.expert_heads.push_back(random_affine(shape.embed_dim, in, rng));
  net.gating_head = random_affine(shape.embed_dim, in, rng);
  return net;
}

TeacherParams TeacherParams::copy_of(const EncoderParams& student) {
  return TeacherParams{student.trunk, student.expert_heads};
}

std::vector<std::span<double>> TeacherParams::tensors() {
  std::vector<std::span<double>> out;
  for (Affine& layer : trunk) push_tensors(out, layer);
  for (Affine& layer : expert_heads) push_tensors(out, layer);
  return out;
}

std::vector<std::span<const double>> TeacherParams::tensors() const {
  std::vector<std::span<const double>> out;
  for (const Affine& layer : trunk) push_tensors(out, layer);
  for (const Affine& layer : expert_heads) push_tensors(out, layer);
  return out;
}

StudentForward forward_student(std::span<const double> x, const EncoderParams& params) {
  StudentForward result;
  Tape& tape = result.tape;
  tape.kind = Tape::Kind::kExperts;
  tape.shape = params.shape();
  check_input(x, tape.shape.input_dim);
  tape.input.assign(x.begin(), x.end());
  const Vector h = run_trunk(params.trunk, x, &tape);
  result.embeddings = run_heads(params.expert_heads, h, &tape);
  return result;
}

Matrix forward_teacher(std::span<const double> x, const TeacherParams& params) {
  const std::size_t in = params.trunk.empty() ? params.expert_heads.front().weight.cols()
                                              : params.trunk.front().weight.cols();
  check_input(x, in);
  const Vector h = run_trunk(params.trunk, x, nullptr);
  return run_heads(params.expert_heads, h, nullptr);
}

GatingForward forward_gating(std::span<const double> x, const EncoderParams& params) {
  GatingForward result;
  Tape& tape = result.tape;
  tape.kind = Tape::Kind::kGating;
  tape.shape = params.shape();
  check_input(x, tape.shape.input_dim);
  tape.input.assign(x.begin(), x.end());
  const Vector h = run_trunk(params.trunk, x, &tape);
  const Matrix out = run_heads(std::span<const Affine>(&params.gating_head, 1), h, &tape);
  result.embedding.assign(out.row(0).begin(), out.row(0).end());
  return result;
}

void backward_into(const Tape& tape, const Matrix& upstream, const EncoderParams& params, GradientBundle& grads) {
  const EncoderShape shape = params.shape();
  const std::size_t heads = tape.kind == Tape::Kind::kExperts ? shape.num_heads : 1;
  if (!(tape.shape == shape) || upstream.rows() != heads || upstream.cols() != shape.embed_dim ||
      tape.output.rows() != heads || tape.hidden.size() != params.trunk.size() || !(grads.shape() == shape)) {
    throw Error(ErrorCode::kTapeMismatch, "tape, upstream gradient and parameters disagree in shape");
  }
  const std::span<const double> trunk_out =
      params.trunk.empty() ? std::span<const double>(tape.input) : std::span<const double>(tape.hidden.back());

  Vector dh(shape.trunk_output_dim(), 0.0);
  Vector du(shape.embed_dim);
  bool any = false;
  for (std::size_t r = 0; r < heads; ++r) {
    const auto f = tape.output.row(r);
    const auto g = upstream.row(r);
    // d(u/|u|)/du = (I - f f^T) / |u|
    const double fg = dot(f, g);
    bool nonzero = false;
    for (std::size_t i = 0; i < du.size(); ++i) {
      du[i] = (g[i] - f[i] * fg) / tape.norms[r];
      nonzero = nonzero || du[i] != 0.0;
    }
    if (!nonzero) continue;
    any = true;
    const Affine& layer = tape.kind == Tape::Kind::kExperts ? params.expert_heads[r] : params.gating_head;
    Affine& grad = tape.kind == Tape::Kind::kExperts ? grads.expert_heads[r] : grads.gating_head;
    accumulate_affine(layer, trunk_out, du, grad, dh);
  }
  if (!any) return;

  for (std::size_t l = params.trunk.size(); l-- > 0;) {
    const Vector& h = tape.hidden[l];
    Vector dz(h.size());
    for (std::size_t i = 0; i < h.size(); ++i) dz[i] = dh[i] * (1.0 - h[i] * h[i]);
    const std::span<const double> input = l == 0 ? std::span<const double>(tape.input)
                                                 : std::span<const double>(tape.hidden[l - 1]);
    Vector back(l == 0 ? 0 : input.size(), 0.0);
    accumulate_affine(params.trunk[l], input, dz, grads.trunk[l], back);
    dh = std::move(back);
  }
}

GradientBundle backward(const Tape& tape, const Matrix& upstream, const EncoderParams& params) {
  GradientBundle grads = GradientBundle::zeros(params.shape());
  backward_into(tape, upstream, params, grads);
  return grads;
}

void ema_update(TeacherParams& teacher, const EncoderParams& student, double momentum) {
  if (!(momentum >= 0.0 && momentum < 1.0)) {
    throw Error(ErrorCode::kInvalidMomentum, "EMA momentum must lie in [0, 1), got " + std::to_string(momentum));
  }
  auto dst = teacher.tensors();
  const auto src = student.tensors();
  // The student's gating head trails its expert tensors and is not mirrored.
  if (src.size() != dst.size() + 2) throw Error(ErrorCode::kDimensionMismatch, "teacher/student layout differs");
  for (std::size_t t = 0; t < dst.size(); ++t) {
    if (dst[t].size() != src[t].size()) throw Error(ErrorCode::kDimensionMismatch, "teacher/student layout differs");
    for (std::size_t i = 0; i < dst[t].size(); ++i) dst[t][i] = momentum * dst[t][i] + (1.0 - momentum) * src[t][i];
  }
}

Vector augment(std::span<const double> x, Rng& rng, const AugmentConfig& cfg) {
  Vector out(x.begin(), x.end());
  if (cfg.noise > 0.0) {
    for (double& v : out) v += cfg.noise * rng.normal();
  }
  if (cfg.dropout > 0.0) {
    for (double& v : out) {
      if (rng.uniform() < cfg.dropout) v = 0.0;
    }
  }
  return out;
}

}  // namespace mice
