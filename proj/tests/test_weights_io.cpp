#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <iterator>

#include "armkit/model.hpp"
#include "armkit/transformer.hpp"
#include "armkit/weights_io.hpp"

using namespace armkit;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("armkit_wio_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

ModelConfig cfg() {
  ModelConfig c;
  c.n_layers = 2;
  c.d_model = 8;
  c.d_ff = 16;
  c.n_heads = 2;
  c.vocab_size = 10;
  c.max_seq = 16;
  c.activation = Activation::gelu;
  return c;
}

}  // namespace

TEST(WeightsIo, RoundTripIsBitExact) {
  const fs::path dir = scratch("rt");
  const ModelConfig c = cfg();
  const ModelWeights w = init_weights(c, 21);
  save_weights(dir / "m", w, c);
  const LoadedModel back = load_weights(dir / "m");
  EXPECT_EQ(back.config, c);
  EXPECT_EQ(back.weights, w);
  const TokenSeq t = {1, 2, 3, 4};
  EXPECT_EQ(forward(t, back.weights, back.config).logits, forward(t, w, c).logits);
  EXPECT_EQ(load_weights(dir / "m.json").weights, w);
}

TEST(WeightsIo, SameSeedWritesIdenticalBytes) {
  const fs::path dir = scratch("bytes");
  const ModelConfig c = cfg();
  save_weights(dir / "a", init_weights(c, 5), c);
  save_weights(dir / "b", init_weights(c, 5), c);
  EXPECT_EQ(slurp(dir / "a.bin"), slurp(dir / "b.bin"));
  std::string ma = slurp(dir / "a.json"), mb = slurp(dir / "b.json");
  // manifests differ only in the blob file name
  const auto pos = mb.find("\"b.bin\"");
  ASSERT_NE(pos, std::string::npos);
  mb.replace(pos, 7, "\"a.bin\"");
  EXPECT_EQ(ma, mb);
}

TEST(WeightsIo, BlobIsLittleEndianF32) {
  const fs::path dir = scratch("le");
  const ModelConfig c = cfg();
  const ModelWeights w = init_weights(c, 1);
  save_weights(dir / "m", w, c);
  const std::string blob = slurp(dir / "m.bin");
  const float first = w.embedding[0];
  std::uint32_t bits = std::bit_cast<std::uint32_t>(first);
  for (int i = 0; i < 4; ++i) EXPECT_EQ(static_cast<unsigned char>(blob[i]), (bits >> (8 * i)) & 0xffu);
}

TEST(WeightsIo, TruncatedBlobNamesTheTensor) {
  const fs::path dir = scratch("trunc");
  const ModelConfig c = cfg();
  save_weights(dir / "m", init_weights(c, 2), c);
  std::string blob = slurp(dir / "m.bin");
  blob.resize(blob.size() - 8);
  std::ofstream(dir / "m.bin", std::ios::binary | std::ios::trunc) << blob;
  try {
    load_weights(dir / "m");
    FAIL() << "expected an IoError";
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("unembedding"), std::string::npos) << e.what();
  }
}

TEST(WeightsIo, NonFiniteValueNamesTheTensor) {
  const fs::path dir = scratch("nan");
  const ModelConfig c = cfg();
  const ModelWeights w = init_weights(c, 2);
  save_weights(dir / "m", w, c);
  std::string blob = slurp(dir / "m.bin");
  // first entry of layers.0.wq sits right after the embedding
  const std::size_t off = w.embedding.size() * 4;
  const std::uint32_t nan_bits = 0x7fc00000u;
  for (int i = 0; i < 4; ++i) blob[off + i] = static_cast<char>((nan_bits >> (8 * i)) & 0xffu);
  std::ofstream(dir / "m.bin", std::ios::binary | std::ios::trunc) << blob;
  try {
    load_weights(dir / "m");
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("layers.0.wq"), std::string::npos) << e.what();
  }
}

TEST(WeightsIo, MissingFilesAndBadManifest) {
  const fs::path dir = scratch("missing");
  EXPECT_THROW(load_weights(dir / "nothing"), IoError);
  std::ofstream(dir / "bad.json") << "{not json";
  EXPECT_THROW(load_weights(dir / "bad"), IoError);
  std::ofstream(dir / "fmt.json") << R"({"format": "other", "version": 1})";
  EXPECT_THROW(load_weights(dir / "fmt"), IoError);
}

TEST(WeightsIo, SaveRejectsMismatchedShapes) {
  const fs::path dir = scratch("shape");
  const ModelConfig c = cfg();
  ModelWeights w = init_weights(c, 3);
  w.layers[1].w_up = Tensor({3, 3});
  try {
    save_weights(dir / "m", w, c);
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("layers.1.w_up"), std::string::npos);
  }
}
