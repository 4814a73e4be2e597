#ifndef MLORQ_MODEL_HPP
#define MLORQ_MODEL_HPP

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mlorq/matrix.hpp"
#include "mlorq/tensor_container.hpp"

namespace mlorq {

enum class Activation { None, Relu, Gelu };

Activation activation_from_string(const std::string& s);
std::string activation_to_string(Activation a);

struct LayerSpec {
  std::string name;
  std::size_t in_features = 0;
  std::size_t out_features = 0;
  std::string weight_ref;
  std::optional<std::string> bias_ref;
  Activation activation_after = Activation::None;
  bool compressible = true;
};

struct ModelManifest {
  std::string model_name;
  std::string container_path;  // resolved relative to the manifest file
  std::vector<LayerSpec> layers;
  std::string calibration_ref;
  std::map<std::string, std::string> hessian_refs;  // layer name -> tensor name
};

/// Parses the manifest document and verifies the sequential chain plus all
/// referenced tensor shapes against the container.
std::pair<ModelManifest, TensorContainer> load_model(const std::string& manifest_path);

ModelManifest parse_manifest(const std::string& manifest_path);
void write_manifest(const ModelManifest& manifest, const std::string& path);

/// Decoded, ready-to-run chain of linear layers.
struct Layer {
  std::string name;
  Matrix weight;             // n_out x n_in
  std::vector<double> bias;  // length n_out (zeros when absent)
  Activation activation = Activation::None;
  bool compressible = true;

  std::size_t n_out() const { return weight.rows(); }
  std::size_t n_in() const { return weight.cols(); }
};

struct Model {
  std::string name;
  std::vector<Layer> layers;
};

Model build_model(const ModelManifest& manifest, const TensorContainer& container);

/// Calibration batch, one sample per row (N x d_in of layer 0).
Matrix load_calibration(const ModelManifest& manifest, const TensorContainer& container);

/// User-provided Hessian weight matrices, keyed by layer name.
std::map<std::string, Matrix> load_provided_hessians(const ModelManifest& manifest,
                                                     const TensorContainer& container);

}  // namespace mlorq

#endif  // MLORQ_MODEL_HPP
