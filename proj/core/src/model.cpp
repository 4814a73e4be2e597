#include "mlorq/model.hpp"

#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "mlorq/errors.hpp"

namespace mlorq {

namespace fs = std::filesystem;
using nlohmann::json;

Activation activation_from_string(const std::string& s) {
  if (s == "none") return Activation::None;
  if (s == "relu") return Activation::Relu;
  if (s == "gelu") return Activation::Gelu;
  throw Error(ErrorCode::InvalidArgument, "unknown activation: " + s);
}

std::string activation_to_string(Activation a) {
  switch (a) {
    case Activation::None: return "none";
    case Activation::Relu: return "relu";
    case Activation::Gelu: return "gelu";
  }
  return "none";
}

ModelManifest parse_manifest(const std::string& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open manifest: " + manifest_path);
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidArgument,
                std::string("manifest is not valid JSON: ") + e.what());
  }

  ModelManifest m;
  try {
    m.model_name = doc.at("model_name").get<std::string>();
    const std::string container = doc.at("container").get<std::string>();
    fs::path base = fs::path(manifest_path).parent_path();
    m.container_path = (base / container).string();
    m.calibration_ref = doc.at("calibration_inputs").get<std::string>();
    for (const json& jl : doc.at("layers")) {
      LayerSpec spec;
      spec.name = jl.at("name").get<std::string>();
      spec.in_features = jl.at("in_features").get<std::size_t>();
      spec.out_features = jl.at("out_features").get<std::size_t>();
      spec.weight_ref = jl.at("weight").get<std::string>();
      if (jl.contains("bias") && !jl.at("bias").is_null())
        spec.bias_ref = jl.at("bias").get<std::string>();
      spec.activation_after =
          activation_from_string(jl.value("activation", std::string("none")));
      spec.compressible = jl.value("compressible", true);
      if (spec.in_features == 0 || spec.out_features == 0)
        throw Error(ErrorCode::InvalidArgument,
                    "layer '" + spec.name + "' has zero feature dimension");
      m.layers.push_back(std::move(spec));
    }
    if (doc.contains("hessians")) {
      for (auto it = doc.at("hessians").begin(); it != doc.at("hessians").end(); ++it)
        m.hessian_refs[it.key()] = it.value().get<std::string>();
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidArgument,
                std::string("manifest missing required key: ") + e.what());
  }
  if (m.layers.empty())
    throw Error(ErrorCode::InvalidArgument, "manifest declares no layers");
  return m;
}

void write_manifest(const ModelManifest& manifest, const std::string& path) {
  json doc;
  doc["model_name"] = manifest.model_name;
  doc["container"] = fs::path(manifest.container_path).filename().string();
  doc["calibration_inputs"] = manifest.calibration_ref;
  doc["layers"] = json::array();
  for (const LayerSpec& spec : manifest.layers) {
    json jl;
    jl["name"] = spec.name;
    jl["in_features"] = spec.in_features;
    jl["out_features"] = spec.out_features;
    jl["weight"] = spec.weight_ref;
    if (spec.bias_ref) jl["bias"] = *spec.bias_ref;
    jl["activation"] = activation_to_string(spec.activation_after);
    jl["compressible"] = spec.compressible;
    doc["layers"].push_back(std::move(jl));
  }
  if (!manifest.hessian_refs.empty()) {
    json jh = json::object();
    for (const auto& [layer, tensor] : manifest.hessian_refs) jh[layer] = tensor;
    doc["hessians"] = std::move(jh);
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot write manifest: " + path);
  out << doc.dump(2) << "\n";
}

namespace {

void require_shape(const TensorContainer& c, const std::string& tensor,
                   const std::vector<std::uint64_t>& expected, const std::string& what) {
  if (!c.has(tensor))
    throw Error(ErrorCode::MissingTensor, what + " references missing tensor '" + tensor + "'");
  const TensorEntry& e = c.get(tensor);
  if (e.shape != expected) {
    std::string got = "(", want = "(";
    for (auto d : e.shape) got += std::to_string(d) + ",";
    for (auto d : expected) want += std::to_string(d) + ",";
    throw Error(ErrorCode::ShapeMismatch,
                what + ": tensor '" + tensor + "' has shape " + got + ") expected " + want + ")");
  }
}

void validate(const ModelManifest& m, const TensorContainer& c) {
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    const LayerSpec& spec = m.layers[i];
    if (i > 0 && spec.in_features != m.layers[i - 1].out_features)
      throw Error(ErrorCode::BrokenChain,
                  "layer '" + spec.name + "' declares in_features " +
                      std::to_string(spec.in_features) + " but previous layer emits " +
                      std::to_string(m.layers[i - 1].out_features));
    require_shape(c, spec.weight_ref, {spec.out_features, spec.in_features},
                  "layer '" + spec.name + "' weight");
    if (spec.bias_ref)
      require_shape(c, *spec.bias_ref, {spec.out_features}, "layer '" + spec.name + "' bias");
    auto h = m.hessian_refs.find(spec.name);
    if (h != m.hessian_refs.end())
      require_shape(c, h->second, {spec.out_features, spec.in_features},
                    "layer '" + spec.name + "' hessian");
  }
  if (!c.has(m.calibration_ref))
    throw Error(ErrorCode::MissingTensor,
                "calibration tensor '" + m.calibration_ref + "' not found");
  const TensorEntry& calib = c.get(m.calibration_ref);
  if (calib.shape.size() != 2 || calib.shape[1] != m.layers.front().in_features)
    throw Error(ErrorCode::ShapeMismatch,
                "calibration tensor must be N x " +
                    std::to_string(m.layers.front().in_features));
}

}  // namespace

std::pair<ModelManifest, TensorContainer> load_model(const std::string& manifest_path) {
  ModelManifest manifest = parse_manifest(manifest_path);
  if (!fs::exists(manifest.container_path))
    throw Error(ErrorCode::IoFailure,
                "container file not found: " + manifest.container_path);
  TensorContainer container = read_container(manifest.container_path);
  validate(manifest, container);
  return {std::move(manifest), std::move(container)};
}

Model build_model(const ModelManifest& manifest, const TensorContainer& container) {
  Model model;
  model.name = manifest.model_name;
  for (const LayerSpec& spec : manifest.layers) {
    Layer layer;
    layer.name = spec.name;
    layer.weight = container.get_matrix(spec.weight_ref);
    layer.bias = spec.bias_ref ? container.get_vector(*spec.bias_ref)
                               : std::vector<double>(spec.out_features, 0.0);
    layer.activation = spec.activation_after;
    layer.compressible = spec.compressible;
    model.layers.push_back(std::move(layer));
  }
  return model;
}

Matrix load_calibration(const ModelManifest& manifest, const TensorContainer& container) {
  return container.get_matrix(manifest.calibration_ref);
}

std::map<std::string, Matrix> load_provided_hessians(const ModelManifest& manifest,
                                                     const TensorContainer& container) {
  std::map<std::string, Matrix> out;
  for (const auto& [layer, tensor] : manifest.hessian_refs)
    out[layer] = container.get_matrix(tensor);
  return out;
}

}  // namespace mlorq
