#pragma once

#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "imdet/features.hpp"
#include "imdet/heads.hpp"
#include "imdet/imagination.hpp"

namespace imdet {

struct ModelConfig {
  EncoderConfig encoder;
  HeadConfig head;

  void validate() const;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

/// Every trainable array of a detector. Also used as the gradient buffer.
struct ModelParams {
  EncoderParams encoder;
  HeadParams head;

  template <class F>
  void visit(F&& fn) {
    encoder.visit(fn);
    head.visit(fn);
  }
  template <class F>
  void visit(F&& fn) const {
    const_cast<ModelParams*>(this)->visit([&](const std::string& name, Mat& m) { fn(name, static_cast<const Mat&>(m)); });
  }

  ModelParams zeros_like() const;
  /// this += alpha * other (shapes must match).
  void axpy(double alpha, const ModelParams& other);
  std::size_t parameter_count() const;
  bool all_finite() const;
};

ModelParams init_params(const ModelConfig& config, std::mt19937_64& rng);

/// Forward intermediates for one image, enough to backpropagate.
struct ForwardTrace {
  EncoderTrace encoder;
  FeatureMap fmap;
  RoiPoolResult pooled;
  ProjectionTrace projection;
};

/// Image + proposals -> proposal representations [P, d].
Mat proposal_features(const ModelConfig& config, const ModelParams& params, const Image& image,
                      std::span<const BoxF> proposals, ForwardTrace* trace = nullptr);

/// Backpropagates dLoss/dfeatures into the encoder part of grad.
void backward_features(const ModelConfig& config, const ModelParams& params, const ForwardTrace& trace,
                       const Mat& grad_features, ModelParams& grad);

/// Discrete state of a forward pass (rectifier masks, pooling winners,
/// pseudo labels). Finite-difference checks are only meaningful where this
/// does not change under the perturbation.
std::vector<std::uint64_t> activation_signature(const ForwardTrace& trace, const HeadLoss& loss);

struct DetectorModel {
  ModelConfig config;
  ClassVocab vocab;
  ModelParams params;

  /// Stable hash of the model configuration and vocabulary.
  std::string config_hash() const;
};

DetectorModel init_model(const ModelConfig& config, const ClassVocab& vocab, std::uint64_t seed);

/// Binary checkpoint: "IMDETCKP", u32 version, u64 header length, JSON
/// header, then every array as little-endian float64 in visit order.
std::vector<std::uint8_t> serialize_checkpoint(const DetectorModel& model, const nlohmann::json& extra = {});
DetectorModel deserialize_checkpoint(const std::vector<std::uint8_t>& bytes, nlohmann::json* extra = nullptr);
void save_checkpoint(const std::filesystem::path& path, const DetectorModel& model, const nlohmann::json& extra = {});
DetectorModel load_checkpoint(const std::filesystem::path& path, nlohmann::json* extra = nullptr);

/// FNV-1a hex of the canonical (sorted-key, compact) JSON text.
std::string json_hash(const nlohmann::json& j);

}  // namespace imdet
