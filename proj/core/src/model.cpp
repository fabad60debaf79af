#include "imdet/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>

#include "imdet/codec.hpp"
#include "imdet/error.hpp"

namespace imdet {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'I', 'M', 'D', 'E', 'T', 'C', 'K', 'P'};
constexpr std::uint32_t kVersion = 1;

template <class T>
void put(std::vector<std::uint8_t>& out, const T& v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  out.insert(out.end(), p, p + sizeof(T));
}

template <class T>
T get(const std::vector<std::uint8_t>& in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) fail(ErrorKind::format, "checkpoint truncated");
  T v;
  std::memcpy(&v, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

class BitPacker {
 public:
  void push(bool b) {
    if (bit_ == 0) words_.push_back(0);
    if (b) words_.back() |= std::uint64_t{1} << bit_;
    bit_ = (bit_ + 1) % 64;
  }
  void word(std::uint64_t w) {
    words_.push_back(w);
    bit_ = 0;
  }
  std::vector<std::uint64_t> take() { return std::move(words_); }

 private:
  std::vector<std::uint64_t> words_;
  int bit_ = 0;
};

}  // namespace

void ModelConfig::validate() const {
  encoder.validate();
  head.validate();
  if (encoder.d != head.d)
    fail(ErrorKind::config, "encoder output size " + std::to_string(encoder.d) + " differs from head input " +
                                std::to_string(head.d));
}

void to_json(nlohmann::json& j, const ModelConfig& c) { j = {{"encoder", c.encoder}, {"head", c.head}}; }

void from_json(const nlohmann::json& j, ModelConfig& c) {
  c = ModelConfig{};
  if (j.contains("encoder")) c.encoder = j.at("encoder").get<EncoderConfig>();
  if (j.contains("head")) c.head = j.at("head").get<HeadConfig>();
  c.validate();
}

ModelParams ModelParams::zeros_like() const {
  ModelParams z = *this;
  z.visit([](const std::string&, Mat& m) { m.setZero(); });
  return z;
}

void ModelParams::axpy(double alpha, const ModelParams& other) {
  std::vector<const Mat*> src;
  other.visit([&](const std::string&, const Mat& m) { src.push_back(&m); });
  std::size_t i = 0;
  visit([&](const std::string& name, Mat& m) {
    if (i >= src.size() || src[i]->rows() != m.rows() || src[i]->cols() != m.cols())
      fail(ErrorKind::invariant, "parameter shape mismatch at " + name);
    m += alpha * *src[i++];
  });
  if (i != src.size()) fail(ErrorKind::invariant, "parameter sets differ in size");
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  visit([&](const std::string&, const Mat& m) { n += static_cast<std::size_t>(m.size()); });
  return n;
}

bool ModelParams::all_finite() const {
  bool ok = true;
  visit([&](const std::string&, const Mat& m) { ok = ok && m.allFinite(); });
  return ok;
}

ModelParams init_params(const ModelConfig& config, std::mt19937_64& rng) {
  config.validate();
  ModelParams p;
  p.encoder = init_encoder(config.encoder, rng);
  p.head = init_head(config.head, rng);
  return p;
}

Mat proposal_features(const ModelConfig& config, const ModelParams& params, const Image& image,
                      std::span<const BoxF> proposals, ForwardTrace* trace) {
  if (proposals.empty()) fail(ErrorKind::argument, "no proposals for image");
  FeatureMap fmap = encode(config.encoder, params.encoder, image, trace ? &trace->encoder : nullptr);
  RoiPoolResult pooled = roi_pool(fmap, proposals, config.encoder.pooled_w, config.encoder.pooled_h);
  Mat features = proposal_representation(config.encoder, params.encoder, pooled.values,
                                         trace ? &trace->projection : nullptr);
  if (trace) {
    trace->fmap = std::move(fmap);
    trace->pooled = std::move(pooled);
  }
  return features;
}

void backward_features(const ModelConfig& config, const ModelParams& params, const ForwardTrace& trace,
                       const Mat& grad_features, ModelParams& grad) {
  const Mat g_pooled =
      proposal_representation_backward(config.encoder, params.encoder, trace.projection, grad_features, grad.encoder);
  Mat g_fmap = Mat::Zero(trace.fmap.values.rows(), trace.fmap.values.cols());
  roi_pool_backward(trace.pooled, g_pooled, g_fmap);
  encode_backward(config.encoder, params.encoder, trace.encoder, g_fmap, grad.encoder);
}

std::vector<std::uint64_t> activation_signature(const ForwardTrace& trace, const HeadLoss& loss) {
  BitPacker bits;
  for (const auto& b : trace.encoder.blocks) {
    for (Eigen::Index i = 0; i < b.pre.size(); ++i) bits.push(b.pre.data()[i] > 0);
    for (int idx : b.pool_index) bits.word(static_cast<std::uint64_t>(idx));
  }
  for (int idx : trace.pooled.argmax) bits.word(static_cast<std::uint64_t>(idx));
  for (const Mat* m : {&trace.projection.pre1, &trace.projection.pre2})
    for (Eigen::Index i = 0; i < m->size(); ++i) bits.push(m->data()[i] > 0);
  for (const auto& p : loss.pgt) bits.word(static_cast<std::uint64_t>(p.index));
  for (const auto& t : loss.targets)
    for (int l : t.labels) bits.word(static_cast<std::uint64_t>(l));
  return bits.take();
}

std::string json_hash(const nlohmann::json& j) { return fnv1a_hex(j.dump()); }

std::string DetectorModel::config_hash() const { return json_hash({{"model", config}, {"vocab", vocab}}); }

DetectorModel init_model(const ModelConfig& config, const ClassVocab& vocab, std::uint64_t seed) {
  if (vocab.size() != config.head.num_classes)
    fail(ErrorKind::config, "vocabulary has " + std::to_string(vocab.size()) + " classes, head expects " +
                                std::to_string(config.head.num_classes));
  std::mt19937_64 rng(seed);
  return {config, vocab, init_params(config, rng)};
}

std::vector<std::uint8_t> serialize_checkpoint(const DetectorModel& model, const nlohmann::json& extra) {
  nlohmann::json tensors = nlohmann::json::array();
  model.params.visit([&](const std::string& name, const Mat& m) {
    tensors.push_back({{"name", name}, {"shape", {m.rows(), m.cols()}}});
  });
  const nlohmann::json header = {{"model", model.config},       {"vocab", model.vocab},
                                 {"config_hash", model.config_hash()}, {"d", model.config.encoder.d},
                                 {"tensors", tensors},          {"extra", extra.is_null() ? nlohmann::json::object() : extra}};
  const std::string text = header.dump();
  std::vector<std::uint8_t> out(kMagic, kMagic + 8);
  put(out, kVersion);
  put(out, static_cast<std::uint64_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  model.params.visit([&](const std::string&, const Mat& m) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(m.data());
    out.insert(out.end(), p, p + m.size() * sizeof(double));
  });
  return out;
}

DetectorModel deserialize_checkpoint(const std::vector<std::uint8_t>& bytes, nlohmann::json* extra) {
  if (bytes.size() < 20 || std::memcmp(bytes.data(), kMagic, 8) != 0) fail(ErrorKind::format, "not a checkpoint file");
  std::size_t pos = 8;
  const auto version = get<std::uint32_t>(bytes, pos);
  if (version != kVersion) fail(ErrorKind::format, "unsupported checkpoint version " + std::to_string(version));
  const auto len = get<std::uint64_t>(bytes, pos);
  if (len > bytes.size() - pos) fail(ErrorKind::format, "checkpoint header truncated");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                                   bytes.begin() + static_cast<std::ptrdiff_t>(pos + len));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::format, std::string("checkpoint header is not JSON: ") + e.what());
  }
  pos += len;

  DetectorModel model;
  try {
    model.config = header.at("model").get<ModelConfig>();
    model.vocab = header.at("vocab").get<ClassVocab>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::format, std::string("checkpoint header: ") + e.what());
  }
  if (header.value("config_hash", std::string()) != model.config_hash())
    fail(ErrorKind::format, "checkpoint config hash does not match its header");

  std::mt19937_64 rng(0);
  model.params = init_params(model.config, rng);
  const auto& tensors = header.at("tensors");
  std::size_t t = 0;
  model.params.visit([&](const std::string& name, Mat& m) {
    if (t >= tensors.size() || tensors[t].at("name") != name ||
        tensors[t].at("shape") != nlohmann::json::array({m.rows(), m.cols()}))
      fail(ErrorKind::format, "checkpoint tensor layout mismatch at " + name);
    const std::size_t n = static_cast<std::size_t>(m.size()) * sizeof(double);
    if (pos + n > bytes.size()) fail(ErrorKind::format, "checkpoint truncated in " + name);
    std::memcpy(m.data(), bytes.data() + pos, n);
    pos += n;
    ++t;
  });
  if (t != tensors.size() || pos != bytes.size()) fail(ErrorKind::format, "checkpoint has trailing data");
  if (extra) *extra = header.value("extra", nlohmann::json::object());
  return model;
}

void save_checkpoint(const std::filesystem::path& path, const DetectorModel& model, const nlohmann::json& extra) {
  write_file(path, serialize_checkpoint(model, extra));
}

DetectorModel load_checkpoint(const std::filesystem::path& path, nlohmann::json* extra) {
  return deserialize_checkpoint(read_file(path), extra);
}

}  // namespace imdet
