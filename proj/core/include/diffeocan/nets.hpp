#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "diffeocan/image.hpp"
#include "diffeocan/tape.hpp"
#include "diffeocan/tensor.hpp"

namespace diffeocan {

// Ordered, named tensor collection.  Order is the contract: tape insertion,
// optimiser state and checkpoints all walk the same sequence.
struct NamedTensors {
  std::vector<std::pair<std::string, Tensor>> items;

  void add(std::string name, Tensor t);
  bool has(const std::string& name) const;
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  std::size_t count() const { return items.size(); }
};

// Binary tensor container: magic "DCNW", u16 version, u32 tensor count, then
// per tensor a u32 name length, the name, u32 rank, u32 dims, and the f32
// payload.  Everything little-endian.
void save_checkpoint(const std::string& path, const NamedTensors& tensors);
NamedTensors load_checkpoint(const std::string& path);

// Inserts every tensor of `w` into the tape, in order.  Pass
// as_parameters=true for the weights being optimised and false for frozen
// nets that only shape the loss surface.
std::vector<Tape::NodeId> insert_weights(Tape& tape, const NamedTensors& w,
                                         bool as_parameters);

// Adam with bias correction; state is kept per parameter slot and must see
// the same parameter list on every step.
class Adam {
 public:
  explicit Adam(float lr, float beta1 = 0.9f, float beta2 = 0.999f, float eps = 1e-8f);
  void step(NamedTensors& params, const std::vector<Tensor>& grads);
  int steps_taken() const { return t_; }

 private:
  float lr_, beta1_, beta2_, eps_;
  int t_ = 0;
  std::vector<std::vector<float>> m_, v_;
};

struct TrainConfig {
  int epochs = 1;
  int batch = 1;
  float lr = 1e-4f;
  std::uint64_t seed = 0;
  float grad_penalty = 10.0f;  // adversarial training only

  void validate() const;
};

// ---------------------------------------------------------------------------
// Coordinate network emitting a 2D velocity field.  Sine activations with a
// fixed frequency multiplier; the two output heads start at exactly zero so
// the generated field, and therefore the generated map, starts at the
// identity.
struct SirenNet {
  int hidden = 128;
  int layers = 3;
  float omega0 = 30.0f;
  NamedTensors w;

  static SirenNet init(int hidden, int layers, float omega0, std::uint64_t seed);
  NamedTensors to_named() const;
  static SirenNet from_named(const NamedTensors& named);
  int weight_count() const { return 2 * layers + 4; }
};

struct SirenVelocityNodes {
  Tape::NodeId raw_x = Tape::kInvalid;       // [H, W], scale applied, no taper
  Tape::NodeId raw_y = Tape::kInvalid;
  Tape::NodeId tapered_x = Tape::kInvalid;   // raw * boundary taper
  Tape::NodeId tapered_y = Tape::kInvalid;
};

// Evaluates the network on the normalised pixel lattice of an h x w grid.
// `ids` must come from insert_weights(tape, net.w, ...).  The output is
// multiplied by `scale` (pixels) and by the boundary taper.
SirenVelocityNodes build_siren_velocity(Tape& tape, const SirenNet& net,
                                        const std::vector<Tape::NodeId>& ids, int h, int w,
                                        float scale);

// Convenience evaluation without an external tape.
VectorField siren_velocity(const SirenNet& net, int h, int w, float scale);

// ---------------------------------------------------------------------------
// Convolutional VAE.  Strided 4x4 convolutions halve the spatial size until
// it reaches <= 8 pixels; the decoder mirrors the encoder with transposed
// convolutions and a sigmoid output.
struct VaeNet {
  int image_size = 64;
  int latent = 10;
  int base_channels = 16;
  int downs = 3;
  NamedTensors w;

  static VaeNet init(int image_size, int latent, int base_channels, std::uint64_t seed);
  NamedTensors to_named() const;
  static VaeNet from_named(const NamedTensors& named);
};

struct VaeTapeNodes {
  Tape::NodeId mu = Tape::kInvalid;       // [1, latent]
  Tape::NodeId logvar = Tape::kInvalid;   // [1, latent]
  Tape::NodeId recon = Tape::kInvalid;    // [1, H, W]
  Tape::NodeId recon_mse = Tape::kInvalid;
  Tape::NodeId kl = Tape::kInvalid;
  Tape::NodeId energy = Tape::kInvalid;   // recon_mse + kl
};

// Builds the deterministic energy of x under the model: the latent is the
// posterior mean, no sampling.  x_node must be [1, H, W].
VaeTapeNodes build_vae_energy(Tape& tape, const VaeNet& net,
                              const std::vector<Tape::NodeId>& ids, Tape::NodeId x_node);

// Scalar energy of one image, no gradients.
float vae_energy(const VaeNet& net, const Image& x);

// Mean-latent reconstruction, for inspection output.
Image vae_reconstruct(const VaeNet& net, const Image& x);

// Trains with the sampled-latent objective.  Returns the mean per-image
// energy of each epoch, first to last.
std::vector<float> train_vae(VaeNet& net, const std::vector<Image>& train,
                             const TrainConfig& cfg);

// ---------------------------------------------------------------------------
// Convolutional critic.  Higher scores mean "closer to the reference set";
// the adversarial energy is the negated score.
struct Discriminator {
  int image_size = 64;
  int base_channels = 16;
  int downs = 3;
  NamedTensors w;

  static Discriminator init(int image_size, int base_channels, std::uint64_t seed);
  NamedTensors to_named() const;
  static Discriminator from_named(const NamedTensors& named);
};

// Critic score node, shape [1].  x_node must be [1, H, W].
Tape::NodeId build_disc_score(Tape& tape, const Discriminator& net,
                              const std::vector<Tape::NodeId>& ids, Tape::NodeId x_node);

float disc_score(const Discriminator& net, const Image& x);
float adv_energy(const Discriminator& net, const Image& x);

// Hinge objective pushing real scores above +1 and fake scores below -1,
// with a finite-difference gradient penalty of weight cfg.grad_penalty on
// interpolated samples.  Returns per-epoch mean losses.
//
// The fake source is invoked with a fresh deterministic seed for every fake
// drawn, so each batch sees newly generated negatives instead of a fixed pool.
using FakeSource = std::function<Image(std::uint64_t draw_seed)>;
std::vector<float> train_discriminator(Discriminator& net, const std::vector<Image>& real,
                                       const FakeSource& fake_source, const TrainConfig& cfg);

// Convenience overload drawing fakes uniformly from a fixed list.
std::vector<float> train_discriminator(Discriminator& net, const std::vector<Image>& real,
                                       const std::vector<Image>& fake, const TrainConfig& cfg);

// Mean score gap (real minus fake) over paired lists, for held-out checks.
float disc_separation(const Discriminator& net, const std::vector<Image>& real,
                      const std::vector<Image>& fake);

// ---------------------------------------------------------------------------
// Task heads: a small U-Net segmenter and a small convolutional classifier.
enum class InnerKind { Segmenter, Classifier };

struct InnerModel {
  InnerKind kind = InnerKind::Segmenter;
  int image_size = 64;
  int num_classes = 1;   // classifier only
  int base_channels = 16;
  NamedTensors w;

  static InnerModel init_segmenter(int image_size, int base_channels, std::uint64_t seed);
  static InnerModel init_classifier(int image_size, int num_classes, int base_channels,
                                    std::uint64_t seed);
  NamedTensors to_named() const;
  static InnerModel from_named(const NamedTensors& named);
};

// Logits node: [1, H, W] for the segmenter, [1, K] for the classifier.
Tape::NodeId build_inner_logits(Tape& tape, const InnerModel& net,
                                const std::vector<Tape::NodeId>& ids, Tape::NodeId x_node);

// Sigmoid probabilities of the segmenter on one image.
Image segment_probs(const InnerModel& net, const Image& x);
// Raw class logits of the classifier on one image.
std::vector<float> classify_logits(const InnerModel& net, const Image& x);
// Argmax with ties resolved to the smallest index.
int argmax_class(const std::vector<float>& logits);

struct InnerSample {
  Image image;
  Mask mask;       // segmenter target
  int label = -1;  // classifier target
};

// Binary cross-entropy from logits for the segmenter, softmax cross-entropy
// for the classifier.  Returns per-epoch mean losses.
std::vector<float> train_inner(InnerModel& net, const std::vector<InnerSample>& train,
                               const TrainConfig& cfg);

// ---------------------------------------------------------------------------
// Number of holes of the foreground: connected components of the background
// (4-connectivity) that do not touch the image border.  The foreground is
// treated as 8-connected, which makes the two counts consistent on digitised
// shapes.
int genus_oracle(const Mask& mask);

}  // namespace diffeocan
