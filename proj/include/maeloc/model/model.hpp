#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "maeloc/autograd/layers.hpp"
#include "maeloc/model/mask.hpp"
#include "maeloc/ngcc/ngcc.hpp"
#include "maeloc/room/scene.hpp"

namespace maeloc::model {

struct ModelConfig {
  int d = 256;
  int depth = 4;   // blocks in the encoder and in the decoder
  int N = 2048;    // samples per audio token
  int heads = 8;
  int expansion = 4;
  int tau = 274;
  int max_mics = 11;
  bool use_tdoa = true;

  void validate() const;
};

struct LossWeights {
  double lambda_audio = 0.1;
  double lambda_source = 1.0;
  double lambda_mic = 1.0;
};

/// Model input for one scene. Audio is index 0 (source) .. M; entries not
/// in mask.S are never read.
struct Example {
  MaskSpec mask;
  std::vector<std::vector<double>> audio;   // M + 1 frames of N samples
  std::vector<std::vector<double>> target;  // clean frames, same scaling
  std::vector<room::Vec3> coords;           // index 0: true source
  ngcc::TdoaFeatureMap features;
  double audio_scale = 1.0;  // frames = raw / audio_scale
  int num_mics() const { return mask.M; }
};

/// Cuts a window of N samples at `offset` from every signal and scales the
/// microphone frames by one shared constant, the largest magnitude among the
/// unmasked microphone frames. The source frame is scaled on its own.
/// Masked audio does not influence anything in the result. Features are
/// computed when `ngcc` is given.
Example make_example(const room::Scene& scene, const MaskSpec& mask, int N, std::size_t offset,
                     ngcc::NgccModel<float>* ngcc);

/// Keeps microphones `mics` (1-based, in the given order) and renumbers them
/// 1..K. Used for evaluation with fewer microphones and for permutations.
room::Scene select_mics(const room::Scene& scene, const std::vector<int>& mics);

/// Permutes an example's microphones: new microphone k is old perm[k - 1].
Example permute_example(const Example& ex, const std::vector<int>& perm);

template <typename T>
struct Forward {
  ag::Var<T> encoded;   // encoder outputs, per scene: audio (S order) then coords (R order)
  ag::Var<T> z;         // [B, d]
  ag::Var<T> decoded;   // per scene: audio 0..M, then coords 0..M
  ag::Var<T> q;         // [B, d], invalid without TDOA features
  ag::Var<T> recon;     // [sum |S|, N] in S order per scene
  ag::Var<T> source;    // [B, 3]
  ag::Var<T> mics;      // [sum M, 3]
  std::vector<int> encoder_offset, decoder_offset, recon_offset, mic_offset;
};

template <typename T>
struct Model {
  ModelConfig config;
  ag::Linear<T> w_enc;        // N -> d, no bias
  ag::Mlp<T> coord_embed;     // 3 -> d -> d with batch norm
  ag::Parameter<T> v_enc_audio, v_enc_coord, v_dec_audio, v_dec_coord;
  ag::Parameter<T> u_audio, u_coord, u_source;
  ag::Transformer<T> encoder, decoder;
  ag::Mlp<T> gamma_a2c, gamma_c2a;  // d -> d -> d
  ag::Linear<T> w_dec;              // d -> N, no bias
  ag::Mlp<T> phi;                   // 2 tau + 1 + 2d -> d -> d
  ag::Mlp<T> psi_source, psi_mic;   // 3d (2d without TDOA) -> d -> 3

  Model() = default;
  Model(const ModelConfig& config, std::uint64_t seed);

  /// Encoder token matrix for a batch, per scene audio tokens for m in S
  /// then coordinate tokens for m in R.
  ag::Var<T> embed(ag::Graph<T>& g, const std::vector<const Example*>& batch);
  ag::Var<T> encode(ag::Graph<T>& g, ag::Var<T> tokens, const ag::Segments& segments);
  /// 2(M + 1) decoder tokens per scene: audio 0..M then coordinates 0..M.
  ag::Var<T> assemble(ag::Graph<T>& g, ag::Var<T> encoded, const std::vector<const Example*>& batch,
                      const std::vector<int>& encoder_offset);
  ag::Var<T> decode(ag::Graph<T>& g, ag::Var<T> y, const ag::Segments& segments);
  ag::Var<T> tdoa_pool(ag::Graph<T>& g, ag::Var<T> decoded, const std::vector<const Example*>& batch,
                       const std::vector<int>& decoder_offset);

  Forward<T> forward(ag::Graph<T>& g, const std::vector<const Example*>& batch);
  ag::Var<T> loss(ag::Graph<T>& g, const Forward<T>& f, const std::vector<const Example*>& batch,
                  const LossWeights& weights);

  void collect(std::vector<ag::Parameter<T>*>& out);
  void state(std::vector<ag::StateRef<T>>& out);
  std::size_t num_parameters();
};

/// Loss evaluated directly from predictions, independent of the graph.
double reference_loss(const std::vector<std::vector<double>>& recon, const room::Vec3& source,
                      const std::vector<room::Vec3>& mics, const Example& ex, const LossWeights& w);

/// Per-scene outputs in plain types.
struct Prediction {
  room::Vec3 source;
  std::vector<room::Vec3> mics;               // 1..M stored at 0..M-1
  std::vector<std::vector<double>> recon;     // for m in S, S order
};

template <typename T>
std::vector<Prediction> predict(Model<T>& model, const std::vector<const Example*>& batch);

void save_model(const std::string& path, Model<float>& model);
Model<float> load_model(const std::string& path);
/// Copies the state of a float model into a double model of the same config.
Model<double> to_double(Model<float>& model);

}  // namespace maeloc::model
