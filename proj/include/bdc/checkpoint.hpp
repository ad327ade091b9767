#pragma once

#include <optional>
#include <string>
#include <vector>

#include "bdc/latents.hpp"
#include "bdc/model.hpp"

namespace bdc {

struct ParamBlob {
  std::string name;
  std::vector<int> shape;
  std::vector<float> data;  // stored little-endian 32-bit
};

// Everything a rollout needs, in one binary container (magic "BDC1"):
// model config, normalizer statistics, the fitted tokenizer, and the
// parameter tensors with a name/shape directory.
struct CheckpointData {
  ModelConfig config;
  Normalizer action_norm;
  Normalizer latent_norm;
  std::optional<LatentTokenizer> tokenizer;
  std::vector<ParamBlob> params;
};

void save_checkpoint(const std::string& path, const CheckpointData& data);
CheckpointData load_checkpoint(const std::string& path);

template <class S>
std::vector<ParamBlob> to_blobs(const ParamStore<S>& store) {
  std::vector<ParamBlob> blobs;
  for (const auto& [name, t] : store.items()) {
    ParamBlob b;
    b.name = name;
    b.shape = t.shape();
    b.data.resize(t.numel());
    for (std::size_t i = 0; i < t.numel(); ++i)
      b.data[i] = static_cast<float>(t.data()[i]);
    blobs.push_back(std::move(b));
  }
  return blobs;
}

template <class S>
void load_params(PolicyModel<S>& model, const std::vector<ParamBlob>& blobs) {
  const auto& items = model.params().items();
  if (items.size() != blobs.size())
    throw std::runtime_error("checkpoint: parameter count mismatch");
  for (std::size_t i = 0; i < blobs.size(); ++i) {
    const ParamBlob& b = blobs[i];
    Tensor<S> t = model.params().get(b.name);
    if (t.shape() != b.shape)
      throw std::runtime_error("checkpoint: shape mismatch for " + b.name);
    for (std::size_t j = 0; j < t.numel(); ++j)
      t.mutable_data()[j] = static_cast<S>(b.data[j]);
  }
}

template <class S>
PolicyModel<S> model_from_checkpoint(const CheckpointData& data) {
  PolicyModel<S> model(data.config, /*seed=*/0);
  load_params(model, data.params);
  return model;
}

}  // namespace bdc
