#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "mlorq/errors.hpp"
#include "mlorq/model.hpp"
#include "test_util.hpp"

using namespace mlorq;
namespace fs = std::filesystem;

namespace {

// Builds a 2-layer 4 -> 3 -> 2 fixture on disk and lets the caller mutate the
// manifest JSON before it is written.
struct Fixture {
  fs::path dir;
  std::string manifest_path;

  explicit Fixture(const std::string& name, bool with_hessian = false,
                   std::size_t wrong_in_features = 0, bool bad_hessian_shape = false) {
    dir = fs::temp_directory_path() / ("mlorq_model_" + name);
    fs::create_directories(dir);
    std::mt19937_64 rng(99);

    TensorContainer c;
    c.add_f32("fc0.weight", testutil::random_matrix(rng, 3, 4));
    c.add_f32_vector("fc0.bias", testutil::random_vector(rng, 3));
    c.add_f32("fc1.weight", testutil::random_matrix(rng, 2, 3));
    c.add_f32("calib", testutil::random_matrix(rng, 8, 4));
    if (with_hessian) {
      if (bad_hessian_shape)
        c.add_f32("fc0.hess", testutil::random_matrix(rng, 2, 2));
      else
        c.add_f32("fc0.hess", testutil::random_matrix(rng, 3, 4));
    }
    write_container(c, (dir / "tensors.mlrq").string());

    std::ofstream m(dir / "model.json");
    m << R"({
  "model_name": "toy",
  "container": "tensors.mlrq",
  "calibration_inputs": "calib",
  "layers": [
    {"name": "fc0", "in_features": 4, "out_features": 3, "weight": "fc0.weight",
     "bias": "fc0.bias", "activation": "relu", "compressible": true},
    {"name": "fc1", "in_features": )"
      << (wrong_in_features ? wrong_in_features : 3)
      << R"(, "out_features": 2, "weight": "fc1.weight", "activation": "none"}
  ])";
    if (with_hessian) m << R"(,
  "hessians": {"fc0": "fc0.hess"})";
    m << "\n}\n";
    m.close();
    manifest_path = (dir / "model.json").string();
  }

  ~Fixture() { fs::remove_all(dir); }
};

}  // namespace

TEST_CASE("a consistent 2-layer chain loads") {
  Fixture f("ok");
  auto [manifest, container] = load_model(f.manifest_path);
  CHECK(manifest.model_name == "toy");
  REQUIRE(manifest.layers.size() == 2);
  CHECK(manifest.layers[0].activation_after == Activation::Relu);
  CHECK(manifest.layers[1].bias_ref == std::nullopt);

  const Model model = build_model(manifest, container);
  CHECK(model.layers[0].n_out() == 3);
  CHECK(model.layers[0].n_in() == 4);
  CHECK(model.layers[1].bias == std::vector<double>{0.0, 0.0});
  const Matrix calib = load_calibration(manifest, container);
  CHECK(calib.rows() == 8);
  CHECK(calib.cols() == 4);
}

TEST_CASE("chain violation raises BrokenChain") {
  Fixture f("chain", false, 5);
  try {
    load_model(f.manifest_path);
    FAIL("expected BrokenChain");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::BrokenChain);
  }
}

TEST_CASE("hessian with wrong shape raises ShapeMismatch") {
  Fixture f("hshape", true, 0, true);
  try {
    load_model(f.manifest_path);
    FAIL("expected ShapeMismatch");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ShapeMismatch);
  }
}

TEST_CASE("well-shaped hessian loads through the manifest") {
  Fixture f("hok", true);
  auto [manifest, container] = load_model(f.manifest_path);
  const auto hessians = load_provided_hessians(manifest, container);
  REQUIRE(hessians.count("fc0") == 1);
  CHECK(hessians.at("fc0").rows() == 3);
  CHECK(hessians.at("fc0").cols() == 4);
}

TEST_CASE("missing tensor raises MissingTensor") {
  Fixture f("missing");
  // point the manifest at a tensor that does not exist
  std::ifstream in(f.manifest_path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  in.close();
  const auto pos = text.find("fc1.weight");
  text.replace(pos, 10, "fc1.absent");
  std::ofstream out(f.manifest_path, std::ios::trunc);
  out << text;
  out.close();
  try {
    load_model(f.manifest_path);
    FAIL("expected MissingTensor");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::MissingTensor);
  }
}

TEST_CASE("randomized fuzzed manifests with broken chains are rejected (property)") {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 25; ++trial) {
    std::uniform_int_distribution<std::size_t> dim(1, 6);
    const std::size_t d0 = dim(rng), d1 = dim(rng), d2 = dim(rng);
    std::size_t wrong = dim(rng);
    if (wrong == d1) wrong = d1 + 1;

    const fs::path dir = fs::temp_directory_path() / "mlorq_fuzz_manifest";
    fs::create_directories(dir);
    TensorContainer c;
    c.add_f32("w0", testutil::random_matrix(rng, d1, d0));
    c.add_f32("w1", testutil::random_matrix(rng, d2, d1));
    c.add_f32("calib", testutil::random_matrix(rng, 2, d0));
    write_container(c, (dir / "t.mlrq").string());
    std::ofstream m(dir / "m.json");
    m << "{\"model_name\":\"f\",\"container\":\"t.mlrq\",\"calibration_inputs\":\"calib\","
      << "\"layers\":[{\"name\":\"l0\",\"in_features\":" << d0 << ",\"out_features\":" << d1
      << ",\"weight\":\"w0\"},{\"name\":\"l1\",\"in_features\":" << wrong
      << ",\"out_features\":" << d2 << ",\"weight\":\"w1\"}]}\n";
    m.close();
    CHECK_THROWS_AS(load_model((dir / "m.json").string()), Error);
    fs::remove_all(dir);
  }
}

TEST_CASE("manifest writer round-trips through the parser") {
  Fixture f("writer", true);
  auto [manifest, container] = load_model(f.manifest_path);
  const std::string copy = (f.dir / "copy.json").string();
  write_manifest(manifest, copy);
  ModelManifest again = parse_manifest(copy);
  CHECK(again.model_name == manifest.model_name);
  REQUIRE(again.layers.size() == manifest.layers.size());
  for (std::size_t i = 0; i < again.layers.size(); ++i) {
    CHECK(again.layers[i].name == manifest.layers[i].name);
    CHECK(again.layers[i].in_features == manifest.layers[i].in_features);
    CHECK(again.layers[i].activation_after == manifest.layers[i].activation_after);
  }
  CHECK(again.hessian_refs == manifest.hessian_refs);
}
