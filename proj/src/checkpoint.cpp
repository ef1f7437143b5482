#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "mice/trainer.hpp"

namespace mice {

namespace {

enum Section : std::uint32_t {
  kConfig = 1,
  kStudent = 2,
  kTeacher = 3,
  kMu = 4,
  kOmega = 5,
  kQueue = 6,
  kOptimizer = 7,
  kRng = 8,
  kProgress = 9,
};

constexpr char kMagic[4] = {'M', 'I', 'C', 'E'};

class Writer {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void bytes(const std::string& s) { out_ += s; }

  void values(std::span<const double> v) {
    u64(v.size());
    for (double x : v) f64(x);
  }
  void matrix(const Matrix& m) {
    u64(m.rows());
    u64(m.cols());
    for (double x : m.values()) f64(x);
  }
  void affine(const Affine& a) {
    matrix(a.weight);
    values(a.bias);
  }
  void layers(const std::vector<Affine>& ls) {
    u64(ls.size());
    for (const Affine& a : ls) affine(a);
  }
  template <class Tag>
  void network(const Network<Tag>& net) {
    layers(net.trunk);
    layers(net.expert_heads);
    affine(net.gating_head);
  }

  const std::string& str() const { return out_; }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(std::string_view data) : data_(data) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string_view take(std::size_t n) {
    need(n);
    const std::string_view out = data_.substr(pos_, n);
    pos_ += n;
    return out;
  }

  Vector values() {
    const std::uint64_t n = count(8);
    Vector v(n);
    for (double& x : v) x = f64();
    return v;
  }
  Matrix matrix() {
    const std::uint64_t rows = u64();
    const std::uint64_t cols = u64();
    if (cols != 0 && rows > remaining() / 8 / cols) corrupt("matrix larger than section");
    Matrix m(rows, cols);
    for (double& x : m.values()) x = f64();
    return m;
  }
  Affine affine() {
    Affine a;
    a.weight = matrix();
    a.bias = values();
    if (a.bias.size() != a.weight.rows()) corrupt("bias length disagrees with weight rows");
    return a;
  }
  std::vector<Affine> layers() {
    const std::uint64_t n = count(24);
    std::vector<Affine> out;
    for (std::uint64_t i = 0; i < n; ++i) out.push_back(affine());
    return out;
  }
  template <class Tag>
  Network<Tag> network() {
    Network<Tag> net;
    net.trunk = layers();
    net.expert_heads = layers();
    net.gating_head = affine();
    return net;
  }

  bool done() const { return pos_ == data_.size(); }
  std::size_t remaining() const { return data_.size() - pos_; }

  [[noreturn]] static void corrupt(const std::string& why) { throw Error(ErrorCode::kCorruptCheckpoint, why); }

 private:
  void need(std::size_t n) const {
    if (n > remaining()) corrupt("unexpected end of data");
  }
  // Element count whose payload must fit in what is left.
  std::uint64_t count(std::size_t min_bytes_each) {
    const std::uint64_t n = u64();
    if (n > remaining() / min_bytes_each) corrupt("element count exceeds data");
    return n;
  }

  std::string_view data_;
  std::size_t pos_ = 0;
};

void check_network_shape(const EncoderShape& shape) {
  if (shape.num_heads == 0 || shape.embed_dim == 0 || shape.input_dim == 0) {
    Reader::corrupt("network has an empty layer");
  }
}

}  // namespace

std::string serialize_checkpoint(const TrainConfig& config, const TrainState& state) {
  std::map<std::uint32_t, std::string> sections;
  {
    Writer w;
    w.bytes(serialize_config(config));
    sections[kConfig] = w.str();
  }
  {
    Writer w;
    w.network(state.student);
    sections[kStudent] = w.str();
  }
  {
    Writer w;
    w.layers(state.teacher.trunk);
    w.layers(state.teacher.expert_heads);
    sections[kTeacher] = w.str();
  }
  {
    Writer w;
    w.matrix(state.mu.mu);
    sections[kMu] = w.str();
  }
  {
    Writer w;
    w.matrix(state.omega);
    sections[kOmega] = w.str();
  }
  {
    Writer w;
    const EmbeddingQueue& q = state.queue;
    w.u64(q.capacity());
    w.u64(q.heads());
    w.u64(q.dim());
    w.u64(q.size());
    for (std::size_t i = 0; i < q.size(); ++i) {
      for (std::size_t k = 0; k < q.heads(); ++k) {
        for (double x : q.row(i, k)) w.f64(x);
      }
    }
    sections[kQueue] = w.str();
  }
  {
    Writer w;
    w.network(state.momentum.network);
    w.matrix(state.momentum.mu);
    w.matrix(state.momentum.omega);
    sections[kOptimizer] = w.str();
  }
  {
    Writer w;
    for (std::uint64_t s : state.rng.state()) w.u64(s);
    sections[kRng] = w.str();
  }
  {
    Writer w;
    w.u64(state.epoch);
    w.f64(state.lr);
    w.matrix(state.accumulator.mu_hat());
    w.u64(state.accumulator.counts().size());
    for (std::size_t c : state.accumulator.counts()) w.u64(c);
    sections[kProgress] = w.str();
  }

  Writer out;
  out.bytes(std::string(kMagic, 4));
  out.u32(kCheckpointVersion);
  out.u32(static_cast<std::uint32_t>(sections.size()));
  for (const auto& [id, payload] : sections) {
    out.u32(id);
    out.u64(payload.size());
    out.bytes(payload);
  }
  return out.str();
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
  Reader top(bytes);
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) Reader::corrupt("bad magic bytes");
  top.take(4);
  const std::uint32_t version = top.u32();
  if (version != kCheckpointVersion) {
    throw Error(ErrorCode::kVersionMismatch, "checkpoint format version " + std::to_string(version) +
                                                 ", this build reads version " +
                                                 std::to_string(kCheckpointVersion));
  }
  const std::uint32_t count = top.u32();
  std::map<std::uint32_t, std::string_view> sections;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t id = top.u32();
    const std::uint64_t length = top.u64();
    if (length > top.remaining()) Reader::corrupt("section " + std::to_string(id) + " is truncated");
    if (!sections.emplace(id, top.take(length)).second) Reader::corrupt("duplicate section");
  }
  if (!top.done()) Reader::corrupt("trailing bytes after the last section");
  for (std::uint32_t id = kConfig; id <= kProgress; ++id) {
    if (!sections.count(id)) Reader::corrupt("missing section " + std::to_string(id));
  }
  if (sections.size() != kProgress) Reader::corrupt("unknown section");

  Checkpoint ck;
  try {
    ck.config = parse_config(std::string(sections[kConfig]));
  } catch (const Error& e) {
    Reader::corrupt(std::string("config section: ") + e.what());
  }
  TrainState& s = ck.state;

  const auto finish = [](Reader& r, const char* name) {
    if (!r.done()) Reader::corrupt(std::string("trailing bytes in ") + name + " section");
  };
  {
    Reader r(sections[kStudent]);
    s.student = r.network<ParamTag>();
    finish(r, "student");
  }
  const EncoderShape shape = s.student.shape();
  check_network_shape(shape);
  if (shape != encoder_shape(ck.config, shape.input_dim)) Reader::corrupt("student shape disagrees with config");
  {
    Reader r(sections[kTeacher]);
    s.teacher.trunk = r.layers();
    s.teacher.expert_heads = r.layers();
    finish(r, "teacher");
  }
  if (!(TeacherParams::copy_of(s.student).tensors().size() == s.teacher.tensors().size())) {
    Reader::corrupt("teacher layout disagrees with student");
  }
  const std::size_t k = ck.config.num_clusters;
  const std::size_t d = ck.config.embed_dim;
  {
    Reader r(sections[kMu]);
    s.mu.mu = r.matrix();
    finish(r, "mu");
  }
  {
    Reader r(sections[kOmega]);
    s.omega = r.matrix();
    finish(r, "omega");
  }
  if (s.mu.mu.rows() != k || s.mu.mu.cols() != d || s.omega.rows() != k || s.omega.cols() != d) {
    Reader::corrupt("prototype shape disagrees with config");
  }
  {
    Reader r(sections[kQueue]);
    const std::uint64_t capacity = r.u64();
    const std::uint64_t heads = r.u64();
    const std::uint64_t dim = r.u64();
    const std::uint64_t size = r.u64();
    if (heads != k || dim != d || capacity != ck.config.queue_size || size > capacity) {
      Reader::corrupt("queue shape disagrees with config");
    }
    if (size * heads * dim * 8 != r.remaining()) Reader::corrupt("queue payload length");
    s.queue = EmbeddingQueue(capacity, heads, dim);
    Matrix block(heads, dim);
    for (std::uint64_t i = 0; i < size; ++i) {
      for (double& x : block.values()) x = r.f64();
      s.queue.push(block);
    }
    finish(r, "queue");
  }
  {
    Reader r(sections[kOptimizer]);
    s.momentum.network = r.network<GradTag>();
    s.momentum.mu = r.matrix();
    s.momentum.omega = r.matrix();
    finish(r, "optimizer");
    if (s.momentum.network.shape() != shape || s.momentum.mu.rows() != k || s.momentum.mu.cols() != d ||
        s.momentum.omega.rows() != k || s.momentum.omega.cols() != d) {
      Reader::corrupt("optimizer buffers disagree with parameters");
    }
  }
  {
    Reader r(sections[kRng]);
    Rng::State st{};
    for (auto& word : st) word = r.u64();
    finish(r, "rng");
    s.rng = Rng::from_state(st);
  }
  {
    Reader r(sections[kProgress]);
    s.epoch = r.u64();
    s.lr = r.f64();
    Matrix sums = r.matrix();
    const std::uint64_t n = r.u64();
    if (n != k || sums.rows() != k || sums.cols() != d) Reader::corrupt("accumulator shape disagrees with config");
    std::vector<std::size_t> counts(n);
    for (auto& c : counts) c = r.u64();
    finish(r, "progress");
    s.accumulator = PrototypeAccumulator::from_parts(std::move(sums), std::move(counts));
  }
  return ck;
}

void save_checkpoint(const TrainConfig& config, const TrainState& state, const std::string& path) {
  const std::string bytes = serialize_checkpoint(config, state);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::kIoError, "write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) { return deserialize_checkpoint(read_text_file(path)); }

}  // namespace mice
