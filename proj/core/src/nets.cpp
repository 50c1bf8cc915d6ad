#include "diffeocan/nets.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "diffeocan/common.hpp"
#include "diffeocan/svf.hpp"

namespace diffeocan {

// ---------------------------------------------------------------------------
// NamedTensors

void NamedTensors::add(std::string name, Tensor t) {
  if (name.empty()) throw std::invalid_argument("NamedTensors::add: empty name");
  if (has(name)) throw std::invalid_argument("NamedTensors::add: duplicate name '" + name + "'");
  items.emplace_back(std::move(name), std::move(t));
}

bool NamedTensors::has(const std::string& name) const {
  for (const auto& [n, t] : items) {
    if (n == name) return true;
  }
  return false;
}

Tensor& NamedTensors::at(const std::string& name) {
  for (auto& [n, t] : items) {
    if (n == name) return t;
  }
  throw std::invalid_argument("NamedTensors::at: no tensor named '" + name + "'");
}

const Tensor& NamedTensors::at(const std::string& name) const {
  for (const auto& [n, t] : items) {
    if (n == name) return t;
  }
  throw std::invalid_argument("NamedTensors::at: no tensor named '" + name + "'");
}

// ---------------------------------------------------------------------------
// Checkpoint container

namespace {

constexpr char kMagic[4] = {'D', 'C', 'N', 'W'};
constexpr std::uint16_t kVersion = 1;

void put_u16(std::ostream& out, std::uint16_t v) {
  const unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                              static_cast<unsigned char>(v >> 8)};
  out.write(reinterpret_cast<const char*>(b), 2);
}

void put_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(b), 4);
}

void put_f32(std::ostream& out, const float* data, std::size_t n) {
  static_assert(sizeof(float) == 4);
  for (std::size_t k = 0; k < n; ++k) {
    std::uint32_t bits;
    std::memcpy(&bits, data + k, 4);
    put_u32(out, bits);
  }
}

std::uint16_t get_u16(std::istream& in, const std::string& path) {
  unsigned char b[2];
  in.read(reinterpret_cast<char*>(b), 2);
  if (!in) throw ParseError(path + ": truncated checkpoint");
  return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

std::uint32_t get_u32(std::istream& in, const std::string& path) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw ParseError(path + ": truncated checkpoint");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const NamedTensors& tensors) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError(path + ": cannot open for writing");
  out.write(kMagic, 4);
  put_u16(out, kVersion);
  put_u32(out, static_cast<std::uint32_t>(tensors.count()));
  for (const auto& [name, t] : tensors.items) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (int d : t.shape) put_u32(out, static_cast<std::uint32_t>(d));
    put_f32(out, t.data.data(), t.data.size());
  }
  if (!out) throw ParseError(path + ": write failed");
}

NamedTensors load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(path + ": cannot open");
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) {
    throw ParseError(path + ": bad checkpoint magic");
  }
  const std::uint16_t version = get_u16(in, path);
  if (version != kVersion) {
    throw ParseError(path + ": unsupported checkpoint version " + std::to_string(version));
  }
  const std::uint32_t count = get_u32(in, path);
  NamedTensors out;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = get_u32(in, path);
    if (name_len == 0 || name_len > 4096) {
      throw ParseError(path + ": implausible tensor name length");
    }
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    if (!in) throw ParseError(path + ": truncated checkpoint");
    const std::uint32_t rank = get_u32(in, path);
    if (rank == 0 || rank > 8) throw ParseError(path + ": implausible tensor rank");
    std::vector<int> shape(rank);
    std::size_t numel = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      const std::uint32_t dim = get_u32(in, path);
      if (dim == 0 || dim > (1u << 28)) throw ParseError(path + ": implausible dimension");
      shape[d] = static_cast<int>(dim);
      numel *= dim;
    }
    Tensor t = Tensor::zeros(shape);
    for (std::size_t k = 0; k < numel; ++k) {
      const std::uint32_t bits = get_u32(in, path);
      std::memcpy(&t.data[k], &bits, 4);
    }
    out.add(std::move(name), std::move(t));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Tape plumbing

std::vector<Tape::NodeId> insert_weights(Tape& tape, const NamedTensors& w,
                                         bool as_parameters) {
  std::vector<Tape::NodeId> ids;
  ids.reserve(w.count());
  for (const auto& [name, t] : w.items) ids.push_back(tape.leaf(t, as_parameters));
  return ids;
}

namespace {

Tape::NodeId scalar_const(Tape& t, float v) { return t.constant(Tensor::scalar(v)); }

Tape::NodeId lrelu(Tape& t, Tape::NodeId x, float alpha = 0.2f) {
  return t.add(t.mul(x, scalar_const(t, alpha)), t.mul(t.relu(x), scalar_const(t, 1.0f - alpha)));
}

Tape::NodeId linear(Tape& t, Tape::NodeId x, Tape::NodeId w, Tape::NodeId b) {
  return t.add(t.matmul(x, w), b);
}

Tape::NodeId conv_block(Tape& t, Tape::NodeId x, Tape::NodeId w, Tape::NodeId b, int stride,
                        int pad) {
  return t.add(t.conv2d(x, w, stride, pad), b);
}

Tape::NodeId convt_block(Tape& t, Tape::NodeId x, Tape::NodeId w, Tape::NodeId b, int stride,
                         int pad) {
  return t.add(t.conv_transpose2d(x, w, stride, pad), b);
}

Tensor uniform_tensor(Rng& rng, std::vector<int> shape, float bound) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (float& v : t.data) v = rng.uniform(-bound, bound);
  return t;
}

// Encoder channel plan: strided 4x4 convolutions halve the spatial size
// until it reaches <= 8 or turns odd; channel width doubles, capped at 64.
std::vector<int> conv_channels(int image_size, int base) {
  if (image_size < 8) throw std::invalid_argument("conv_channels: image size below 8");
  if (base < 1) throw std::invalid_argument("conv_channels: base channels below 1");
  std::vector<int> chans;
  int s = image_size;
  int c = base;
  while (s > 8 && s % 2 == 0) {
    chans.push_back(std::min(c, 64));
    c *= 2;
    s /= 2;
  }
  if (chans.empty()) throw std::invalid_argument("conv_channels: image size admits no downsampling");
  return chans;
}

int spatial_after(int image_size, int downs) {
  int s = image_size;
  for (int i = 0; i < downs; ++i) s /= 2;
  return s;
}

void add_meta(NamedTensors& named, const std::string& key, float value) {
  named.add("meta/" + key, Tensor::scalar(value));
}

int meta_int(const NamedTensors& named, const std::string& key) {
  const Tensor& t = named.at("meta/" + key);
  return static_cast<int>(std::lround(t.data[0]));
}

float meta_float(const NamedTensors& named, const std::string& key) {
  return named.at("meta/" + key).data[0];
}

// Copies every weight of `expected` out of `named`, validating presence and
// shape.  Keeps loaders strict without duplicating shape arithmetic.
void fill_weights(NamedTensors& dst, const NamedTensors& named) {
  for (auto& [name, t] : dst.items) {
    if (!named.has(name)) throw ParseError("checkpoint is missing tensor '" + name + "'");
    const Tensor& src = named.at(name);
    if (src.shape != t.shape) {
      throw ParseError("checkpoint tensor '" + name + "' has shape " + src.shape_str() +
                       ", expected " + t.shape_str());
    }
    t = src;
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Adam

Adam::Adam(float lr, float beta1, float beta2, float eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  if (!(lr > 0.0f)) throw std::invalid_argument("Adam: lr must be positive");
}

void Adam::step(NamedTensors& params, const std::vector<Tensor>& grads) {
  if (grads.size() != params.count()) {
    throw std::invalid_argument("Adam::step: gradient count does not match parameter count");
  }
  if (m_.empty()) {
    m_.resize(params.count());
    v_.resize(params.count());
    for (std::size_t i = 0; i < params.count(); ++i) {
      m_[i].assign(params.items[i].second.data.size(), 0.0f);
      v_[i].assign(params.items[i].second.data.size(), 0.0f);
    }
  }
  ++t_;
  const float bc1 = 1.0f - std::pow(beta1_, static_cast<float>(t_));
  const float bc2 = 1.0f - std::pow(beta2_, static_cast<float>(t_));
  for (std::size_t i = 0; i < params.count(); ++i) {
    Tensor& p = params.items[i].second;
    const Tensor& g = grads[i];
    if (g.data.size() != p.data.size()) {
      throw std::invalid_argument("Adam::step: gradient shape mismatch at slot " +
                                  std::to_string(i));
    }
    for (std::size_t k = 0; k < p.data.size(); ++k) {
      m_[i][k] = beta1_ * m_[i][k] + (1.0f - beta1_) * g.data[k];
      v_[i][k] = beta2_ * v_[i][k] + (1.0f - beta2_) * g.data[k] * g.data[k];
      const float mhat = m_[i][k] / bc1;
      const float vhat = v_[i][k] / bc2;
      p.data[k] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

void TrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("TrainConfig: epochs must be >= 1");
  if (batch < 1) throw std::invalid_argument("TrainConfig: batch must be >= 1");
  if (!(lr > 0.0f)) throw std::invalid_argument("TrainConfig: lr must be positive");
  if (!(grad_penalty >= 0.0f)) throw std::invalid_argument("TrainConfig: grad_penalty must be >= 0");
}

// ---------------------------------------------------------------------------
// SirenNet

SirenNet SirenNet::init(int hidden, int layers, float omega0, std::uint64_t seed) {
  if (hidden < 1 || layers < 1) throw std::invalid_argument("SirenNet: bad dimensions");
  if (!(omega0 > 0.0f)) throw std::invalid_argument("SirenNet: omega0 must be positive");
  SirenNet net;
  net.hidden = hidden;
  net.layers = layers;
  net.omega0 = omega0;
  Rng rng(seed);
  for (int l = 0; l < layers; ++l) {
    const int fan_in = l == 0 ? 2 : hidden;
    const float wb = l == 0 ? 1.0f / static_cast<float>(fan_in)
                            : std::sqrt(6.0f / static_cast<float>(fan_in)) / omega0;
    net.w.add("layer" + std::to_string(l) + "/w", uniform_tensor(rng, {fan_in, hidden}, wb));
    net.w.add("layer" + std::to_string(l) + "/b",
              uniform_tensor(rng, {hidden}, 1.0f / std::sqrt(static_cast<float>(fan_in))));
  }
  // Zero heads: the emitted field starts at exactly zero, so optimisation
  // starts from the identity map.
  net.w.add("head_x/w", Tensor::zeros({hidden, 1}));
  net.w.add("head_x/b", Tensor::zeros({1}));
  net.w.add("head_y/w", Tensor::zeros({hidden, 1}));
  net.w.add("head_y/b", Tensor::zeros({1}));
  return net;
}

NamedTensors SirenNet::to_named() const {
  NamedTensors named;
  add_meta(named, "net", 0.0f);
  add_meta(named, "hidden", static_cast<float>(hidden));
  add_meta(named, "layers", static_cast<float>(layers));
  add_meta(named, "omega0", omega0);
  for (const auto& [name, t] : w.items) named.add(name, t);
  return named;
}

SirenNet SirenNet::from_named(const NamedTensors& named) {
  SirenNet net = init(meta_int(named, "hidden"), meta_int(named, "layers"),
                      meta_float(named, "omega0"), 0);
  fill_weights(net.w, named);
  return net;
}

SirenVelocityNodes build_siren_velocity(Tape& tape, const SirenNet& net,
                                        const std::vector<Tape::NodeId>& ids, int h, int w,
                                        float scale) {
  if (static_cast<int>(ids.size()) != net.weight_count()) {
    throw std::invalid_argument("build_siren_velocity: weight id count mismatch");
  }
  if (h < 3 || w < 3) throw std::invalid_argument("build_siren_velocity: grid too small");
  const int n = h * w;
  Tensor coords = Tensor::zeros({n, 2});
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      coords.data[2 * (static_cast<std::size_t>(i) * w + j) + 0] =
          2.0f * static_cast<float>(j) / static_cast<float>(w - 1) - 1.0f;
      coords.data[2 * (static_cast<std::size_t>(i) * w + j) + 1] =
          2.0f * static_cast<float>(i) / static_cast<float>(h - 1) - 1.0f;
    }
  }
  const Tape::NodeId omega = scalar_const(tape, net.omega0);
  Tape::NodeId hcur = tape.constant(std::move(coords));
  for (int l = 0; l < net.layers; ++l) {
    hcur = tape.sin(tape.mul(linear(tape, hcur, ids[2 * l], ids[2 * l + 1]), omega));
  }
  const int base = 2 * net.layers;
  const Tape::NodeId vx = linear(tape, hcur, ids[base + 0], ids[base + 1]);
  const Tape::NodeId vy = linear(tape, hcur, ids[base + 2], ids[base + 3]);
  const Tape::NodeId scale_node = scalar_const(tape, scale);
  SirenVelocityNodes out;
  out.raw_x = tape.mul(tape.reshape(vx, {h, w}), scale_node);
  out.raw_y = tape.mul(tape.reshape(vy, {h, w}), scale_node);
  Tensor taper = Tensor::zeros({h, w});
  taper.data = boundary_taper(h, w);
  const Tape::NodeId taper_node = tape.constant(std::move(taper));
  out.tapered_x = tape.mul(out.raw_x, taper_node);
  out.tapered_y = tape.mul(out.raw_y, taper_node);
  return out;
}

VectorField siren_velocity(const SirenNet& net, int h, int w, float scale) {
  Tape tape;
  const auto ids = insert_weights(tape, net.w, false);
  const SirenVelocityNodes nodes = build_siren_velocity(tape, net, ids, h, w, scale);
  VectorField v(h, w);
  v.x = tape.value(nodes.raw_x).data;
  v.y = tape.value(nodes.raw_y).data;
  return v;
}

// ---------------------------------------------------------------------------
// VaeNet

VaeNet VaeNet::init(int image_size, int latent, int base_channels, std::uint64_t seed) {
  if (latent < 1) throw std::invalid_argument("VaeNet: latent must be >= 1");
  VaeNet net;
  net.image_size = image_size;
  net.latent = latent;
  net.base_channels = base_channels;
  const std::vector<int> chans = conv_channels(image_size, base_channels);
  net.downs = static_cast<int>(chans.size());
  const int s = spatial_after(image_size, net.downs);
  const int flat = chans.back() * s * s;
  Rng rng(seed);
  int in_ch = 1;
  for (int k = 0; k < net.downs; ++k) {
    const float bound = std::sqrt(1.0f / static_cast<float>(in_ch * 16));
    net.w.add("enc" + std::to_string(k) + "/w",
              uniform_tensor(rng, {chans[k], in_ch, 4, 4}, bound));
    net.w.add("enc" + std::to_string(k) + "/b", Tensor::zeros({chans[k]}));
    in_ch = chans[k];
  }
  const float fb = std::sqrt(1.0f / static_cast<float>(flat));
  net.w.add("mu/w", uniform_tensor(rng, {flat, latent}, fb));
  net.w.add("mu/b", Tensor::zeros({latent}));
  net.w.add("logvar/w", uniform_tensor(rng, {flat, latent}, fb));
  net.w.add("logvar/b", Tensor::zeros({latent}));
  const float lb = std::sqrt(1.0f / static_cast<float>(latent));
  net.w.add("dec_in/w", uniform_tensor(rng, {latent, flat}, lb));
  net.w.add("dec_in/b", Tensor::zeros({flat}));
  for (int k = 0; k < net.downs; ++k) {
    const int c_in = chans[net.downs - 1 - k];
    const int c_out = k + 1 < net.downs ? chans[net.downs - 2 - k] : 1;
    const float bound = std::sqrt(1.0f / static_cast<float>(c_in * 16));
    net.w.add("dec" + std::to_string(k) + "/w", uniform_tensor(rng, {c_in, c_out, 4, 4}, bound));
    net.w.add("dec" + std::to_string(k) + "/b", Tensor::zeros({c_out}));
  }
  return net;
}

NamedTensors VaeNet::to_named() const {
  NamedTensors named;
  add_meta(named, "net", 1.0f);
  add_meta(named, "image_size", static_cast<float>(image_size));
  add_meta(named, "latent", static_cast<float>(latent));
  add_meta(named, "base_channels", static_cast<float>(base_channels));
  for (const auto& [name, t] : w.items) named.add(name, t);
  return named;
}

VaeNet VaeNet::from_named(const NamedTensors& named) {
  VaeNet net = init(meta_int(named, "image_size"), meta_int(named, "latent"),
                    meta_int(named, "base_channels"), 0);
  fill_weights(net.w, named);
  return net;
}

namespace {

struct VaeLatentNodes {
  Tape::NodeId mu, logvar;
};

VaeLatentNodes vae_encode(Tape& t, const VaeNet& net, const std::vector<Tape::NodeId>& ids,
                          Tape::NodeId x_node) {
  const std::vector<int> chans = conv_channels(net.image_size, net.base_channels);
  const int s = spatial_after(net.image_size, net.downs);
  const int flat = chans.back() * s * s;
  Tape::NodeId cur = x_node;
  std::size_t slot = 0;
  for (int k = 0; k < net.downs; ++k, slot += 2) {
    cur = lrelu(t, conv_block(t, cur, ids[slot], ids[slot + 1], 2, 1));
  }
  cur = t.reshape(cur, {1, flat});
  VaeLatentNodes out{};
  out.mu = linear(t, cur, ids[slot], ids[slot + 1]);
  out.logvar = linear(t, cur, ids[slot + 2], ids[slot + 3]);
  return out;
}

Tape::NodeId vae_decode(Tape& t, const VaeNet& net, const std::vector<Tape::NodeId>& ids,
                        Tape::NodeId z_node) {
  const std::vector<int> chans = conv_channels(net.image_size, net.base_channels);
  const int s = spatial_after(net.image_size, net.downs);
  std::size_t slot = 2 * static_cast<std::size_t>(net.downs) + 4;
  Tape::NodeId cur = t.relu(linear(t, z_node, ids[slot], ids[slot + 1]));
  slot += 2;
  cur = t.reshape(cur, {chans.back(), s, s});
  for (int k = 0; k < net.downs; ++k, slot += 2) {
    cur = convt_block(t, cur, ids[slot], ids[slot + 1], 2, 1);
    cur = k + 1 < net.downs ? lrelu(t, cur) : t.sigmoid(cur);
  }
  return cur;
}

Tape::NodeId vae_kl(Tape& t, const VaeLatentNodes& lat, int latent) {
  const Tape::NodeId ones = t.constant(Tensor::full({1, latent}, 1.0f));
  const Tape::NodeId term =
      t.sub(t.add(t.square(lat.mu), t.exp(lat.logvar)), t.add(ones, lat.logvar));
  return t.mul(t.sum(term), scalar_const(t, 0.5f));
}

}  // namespace

VaeTapeNodes build_vae_energy(Tape& tape, const VaeNet& net,
                              const std::vector<Tape::NodeId>& ids, Tape::NodeId x_node) {
  if (ids.size() != net.w.count()) {
    throw std::invalid_argument("build_vae_energy: weight id count mismatch");
  }
  VaeTapeNodes out{};
  const VaeLatentNodes lat = vae_encode(tape, net, ids, x_node);
  out.mu = lat.mu;
  out.logvar = lat.logvar;
  out.recon = vae_decode(tape, net, ids, lat.mu);
  out.recon_mse = tape.mean(tape.square(tape.sub(out.recon, x_node)));
  out.kl = vae_kl(tape, lat, net.latent);
  out.energy = tape.add(out.recon_mse, out.kl);
  return out;
}

float vae_energy(const VaeNet& net, const Image& x) {
  Tape tape;
  const auto ids = insert_weights(tape, net.w, false);
  Tensor xt = Tensor::zeros({1, x.height, x.width});
  xt.data = x.data;
  const VaeTapeNodes nodes = build_vae_energy(tape, net, ids, tape.constant(std::move(xt)));
  return tape.value(nodes.energy).data[0];
}

Image vae_reconstruct(const VaeNet& net, const Image& x) {
  Tape tape;
  const auto ids = insert_weights(tape, net.w, false);
  Tensor xt = Tensor::zeros({1, x.height, x.width});
  xt.data = x.data;
  const VaeTapeNodes nodes = build_vae_energy(tape, net, ids, tape.constant(std::move(xt)));
  Image out(x.height, x.width);
  out.data = tape.value(nodes.recon).data;
  return out;
}

std::vector<float> train_vae(VaeNet& net, const std::vector<Image>& train,
                             const TrainConfig& cfg) {
  cfg.validate();
  if (train.empty()) throw std::invalid_argument("train_vae: empty training set");
  for (const Image& img : train) {
    if (img.height != net.image_size || img.width != net.image_size) {
      throw std::invalid_argument("train_vae: image does not match the model size");
    }
  }
  Adam opt(cfg.lr);
  std::vector<float> epoch_losses;
  const int n = static_cast<int>(train.size());
  for (int e = 0; e < cfg.epochs; ++e) {
    Rng rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(e)));
    std::vector<int> order(n);
    for (int i = 0; i < n; ++i) order[i] = i;
    for (int i = n - 1; i > 0; --i) std::swap(order[i], order[rng.uniform_int(0, i)]);
    double loss_sum = 0.0;
    for (int start = 0; start < n; start += cfg.batch) {
      const int b = std::min(cfg.batch, n - start);
      Tape tape;
      const auto ids = insert_weights(tape, net.w, true);
      Tape::NodeId batch_loss = Tape::kInvalid;
      for (int k = 0; k < b; ++k) {
        const Image& img = train[order[start + k]];
        Tensor xt = Tensor::zeros({1, img.height, img.width});
        xt.data = img.data;
        const Tape::NodeId x_node = tape.constant(std::move(xt));
        const VaeLatentNodes lat = vae_encode(tape, net, ids, x_node);
        Tensor eps = Tensor::zeros({1, net.latent});
        for (float& v : eps.data) v = rng.normal();
        const Tape::NodeId z = tape.add(
            lat.mu, tape.mul(tape.exp(tape.mul(lat.logvar, scalar_const(tape, 0.5f))),
                             tape.constant(std::move(eps))));
        const Tape::NodeId recon = vae_decode(tape, net, ids, z);
        const Tape::NodeId mse = tape.mean(tape.square(tape.sub(recon, x_node)));
        const Tape::NodeId loss = tape.add(mse, vae_kl(tape, lat, net.latent));
        batch_loss = batch_loss == Tape::kInvalid ? loss : tape.add(batch_loss, loss);
      }
      const Tape::NodeId loss =
          tape.mul(batch_loss, scalar_const(tape, 1.0f / static_cast<float>(b)));
      tape.backward(loss);
      std::vector<Tensor> grads;
      grads.reserve(ids.size());
      for (Tape::NodeId id : ids) grads.push_back(tape.grad(id));
      opt.step(net.w, grads);
      loss_sum += static_cast<double>(tape.value(loss).data[0]) * b;
    }
    epoch_losses.push_back(static_cast<float>(loss_sum / n));
  }
  return epoch_losses;
}

// ---------------------------------------------------------------------------
// Discriminator

Discriminator Discriminator::init(int image_size, int base_channels, std::uint64_t seed) {
  Discriminator net;
  net.image_size = image_size;
  net.base_channels = base_channels;
  const std::vector<int> chans = conv_channels(image_size, base_channels);
  net.downs = static_cast<int>(chans.size());
  const int s = spatial_after(image_size, net.downs);
  const int flat = chans.back() * s * s;
  Rng rng(seed);
  int in_ch = 1;
  for (int k = 0; k < net.downs; ++k) {
    const float bound = std::sqrt(1.0f / static_cast<float>(in_ch * 16));
    net.w.add("conv" + std::to_string(k) + "/w",
              uniform_tensor(rng, {chans[k], in_ch, 4, 4}, bound));
    net.w.add("conv" + std::to_string(k) + "/b", Tensor::zeros({chans[k]}));
    in_ch = chans[k];
  }
  net.w.add("score/w", uniform_tensor(rng, {flat, 1}, std::sqrt(1.0f / static_cast<float>(flat))));
  net.w.add("score/b", Tensor::zeros({1}));
  return net;
}

NamedTensors Discriminator::to_named() const {
  NamedTensors named;
  add_meta(named, "net", 2.0f);
  add_meta(named, "image_size", static_cast<float>(image_size));
  add_meta(named, "base_channels", static_cast<float>(base_channels));
  for (const auto& [name, t] : w.items) named.add(name, t);
  return named;
}

Discriminator Discriminator::from_named(const NamedTensors& named) {
  Discriminator net =
      init(meta_int(named, "image_size"), meta_int(named, "base_channels"), 0);
  fill_weights(net.w, named);
  return net;
}

Tape::NodeId build_disc_score(Tape& tape, const Discriminator& net,
                              const std::vector<Tape::NodeId>& ids, Tape::NodeId x_node) {
  if (ids.size() != net.w.count()) {
    throw std::invalid_argument("build_disc_score: weight id count mismatch");
  }
  const std::vector<int> chans = conv_channels(net.image_size, net.base_channels);
  const int s = spatial_after(net.image_size, net.downs);
  const int flat = chans.back() * s * s;
  Tape::NodeId cur = x_node;
  std::size_t slot = 0;
  for (int k = 0; k < net.downs; ++k, slot += 2) {
    cur = lrelu(tape, conv_block(tape, cur, ids[slot], ids[slot + 1], 2, 1));
  }
  cur = tape.reshape(cur, {1, flat});
  return tape.reshape(linear(tape, cur, ids[slot], ids[slot + 1]), {1});
}

float disc_score(const Discriminator& net, const Image& x) {
  Tape tape;
  const auto ids = insert_weights(tape, net.w, false);
  Tensor xt = Tensor::zeros({1, x.height, x.width});
  xt.data = x.data;
  const Tape::NodeId score = build_disc_score(tape, net, ids, tape.constant(std::move(xt)));
  return tape.value(score).data[0];
}

float adv_energy(const Discriminator& net, const Image& x) { return -disc_score(net, x); }

std::vector<float> train_discriminator(Discriminator& net, const std::vector<Image>& real,
                                       const FakeSource& fake_source,
                                       const TrainConfig& cfg) {
  cfg.validate();
  if (real.empty() || !fake_source) {
    throw std::invalid_argument("train_discriminator: empty real set or null fake source");
  }
  const int hw = net.image_size * net.image_size;
  // Finite-difference probe length for the gradient penalty.
  const float fd_h = 0.1f;
  Adam opt(cfg.lr);
  std::vector<float> epoch_losses;
  const int n = static_cast<int>(real.size());
  std::uint64_t draw = 0;
  for (int e = 0; e < cfg.epochs; ++e) {
    Rng rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(e)));
    double loss_sum = 0.0;
    int steps = 0;
    for (int start = 0; start < n; start += cfg.batch) {
      const int b = std::min(cfg.batch, n - start);
      Tape tape;
      const auto ids = insert_weights(tape, net.w, true);
      Tape::NodeId real_sum = Tape::kInvalid;
      Tape::NodeId fake_sum = Tape::kInvalid;
      Tape::NodeId gp_sum = Tape::kInvalid;
      for (int k = 0; k < b; ++k) {
        const Image& xr = real[static_cast<std::size_t>(rng.uniform_int(0, n - 1))];
        const Image xf = fake_source(mix_seed(cfg.seed, 0x666b65ULL + draw++));
        Tensor rt = Tensor::zeros({1, net.image_size, net.image_size});
        rt.data = xr.data;
        Tensor ft = Tensor::zeros({1, net.image_size, net.image_size});
        ft.data = xf.data;
        const Tape::NodeId sr = build_disc_score(tape, net, ids, tape.constant(std::move(rt)));
        const Tape::NodeId sf = build_disc_score(tape, net, ids, tape.constant(std::move(ft)));
        // Hinge terms: reals are pushed above +1, fakes below -1.
        const Tape::NodeId one = scalar_const(tape, 1.0f);
        const Tape::NodeId hr = tape.relu(tape.sub(one, sr));
        const Tape::NodeId hf = tape.relu(tape.add(one, sf));
        real_sum = real_sum == Tape::kInvalid ? hr : tape.add(real_sum, hr);
        fake_sum = fake_sum == Tape::kInvalid ? hf : tape.add(fake_sum, hf);
        if (cfg.grad_penalty > 0.0f) {
          // Probe the score slope along a random unit direction at a random
          // interpolate; penalise squared slope away from 1.
          const float mixw = rng.uniform();
          std::vector<float> u(static_cast<std::size_t>(hw));
          double norm = 0.0;
          for (float& v : u) {
            v = rng.normal();
            norm += static_cast<double>(v) * v;
          }
          const float inv_norm = norm > 0.0 ? 1.0f / static_cast<float>(std::sqrt(norm)) : 0.0f;
          Tensor plus = Tensor::zeros({1, net.image_size, net.image_size});
          Tensor minus = Tensor::zeros({1, net.image_size, net.image_size});
          for (int px = 0; px < hw; ++px) {
            const float base = mixw * xr.data[px] + (1.0f - mixw) * xf.data[px];
            const float du = fd_h * u[px] * inv_norm;
            plus.data[px] = base + du;
            minus.data[px] = base - du;
          }
          const Tape::NodeId sp =
              build_disc_score(tape, net, ids, tape.constant(std::move(plus)));
          const Tape::NodeId sm =
              build_disc_score(tape, net, ids, tape.constant(std::move(minus)));
          const Tape::NodeId dir =
              tape.mul(tape.sub(sp, sm), scalar_const(tape, 1.0f / (2.0f * fd_h)));
          const Tape::NodeId sq_norm =
              tape.mul(tape.square(dir), scalar_const(tape, static_cast<float>(hw)));
          const Tape::NodeId gp =
              tape.square(tape.sub(sq_norm, scalar_const(tape, 1.0f)));
          gp_sum = gp_sum == Tape::kInvalid ? gp : tape.add(gp_sum, gp);
        }
      }
      const Tape::NodeId invb = scalar_const(tape, 1.0f / static_cast<float>(b));
      Tape::NodeId loss = tape.mul(tape.add(real_sum, fake_sum), invb);
      if (gp_sum != Tape::kInvalid) {
        loss = tape.add(loss, tape.mul(tape.mul(gp_sum, invb),
                                       scalar_const(tape, cfg.grad_penalty)));
      }
      tape.backward(loss);
      std::vector<Tensor> grads;
      grads.reserve(ids.size());
      for (Tape::NodeId id : ids) grads.push_back(tape.grad(id));
      opt.step(net.w, grads);
      loss_sum += static_cast<double>(tape.value(loss).data[0]);
      ++steps;
    }
    epoch_losses.push_back(static_cast<float>(loss_sum / std::max(steps, 1)));
  }
  return epoch_losses;
}

std::vector<float> train_discriminator(Discriminator& net, const std::vector<Image>& real,
                                       const std::vector<Image>& fake,
                                       const TrainConfig& cfg) {
  if (fake.empty()) {
    throw std::invalid_argument("train_discriminator: empty real or fake set");
  }
  const FakeSource source = [&fake](std::uint64_t draw_seed) {
    Rng pick(draw_seed);
    return fake[static_cast<std::size_t>(
        pick.uniform_int(0, static_cast<int>(fake.size()) - 1))];
  };
  return train_discriminator(net, real, source, cfg);
}

float disc_separation(const Discriminator& net, const std::vector<Image>& real,
                      const std::vector<Image>& fake) {
  if (real.empty() || fake.empty()) {
    throw std::invalid_argument("disc_separation: empty input lists");
  }
  double sr = 0.0, sf = 0.0;
  for (const Image& x : real) sr += disc_score(net, x);
  for (const Image& x : fake) sf += disc_score(net, x);
  return static_cast<float>(sr / real.size() - sf / fake.size());
}

// ---------------------------------------------------------------------------
// InnerModel

InnerModel InnerModel::init_segmenter(int image_size, int base_channels, std::uint64_t seed) {
  if (image_size % 4 != 0) {
    throw std::invalid_argument("init_segmenter: image size must be divisible by 4");
  }
  InnerModel net;
  net.kind = InnerKind::Segmenter;
  net.image_size = image_size;
  net.base_channels = base_channels;
  const int c1 = base_channels;
  const int c2 = base_channels * 2;
  const int c3 = base_channels * 4;
  Rng rng(seed);
  auto conv_init = [&](int f, int c, int k) {
    return uniform_tensor(rng, {f, c, k, k}, std::sqrt(1.0f / static_cast<float>(c * k * k)));
  };
  net.w.add("e1/w", conv_init(c1, 1, 3));
  net.w.add("e1/b", Tensor::zeros({c1}));
  net.w.add("d1/w", conv_init(c2, c1, 4));
  net.w.add("d1/b", Tensor::zeros({c2}));
  net.w.add("e2/w", conv_init(c2, c2, 3));
  net.w.add("e2/b", Tensor::zeros({c2}));
  net.w.add("d2/w", conv_init(c3, c2, 4));
  net.w.add("d2/b", Tensor::zeros({c3}));
  net.w.add("e3/w", conv_init(c3, c3, 3));
  net.w.add("e3/b", Tensor::zeros({c3}));
  net.w.add("u2/w", uniform_tensor(rng, {c3, c2, 4, 4},
                                   std::sqrt(1.0f / static_cast<float>(c3 * 16))));
  net.w.add("u2/b", Tensor::zeros({c2}));
  net.w.add("f2/w", conv_init(c2, c2 * 2, 3));
  net.w.add("f2/b", Tensor::zeros({c2}));
  net.w.add("u1/w", uniform_tensor(rng, {c2, c1, 4, 4},
                                   std::sqrt(1.0f / static_cast<float>(c2 * 16))));
  net.w.add("u1/b", Tensor::zeros({c1}));
  net.w.add("f1/w", conv_init(c1, c1 * 2, 3));
  net.w.add("f1/b", Tensor::zeros({c1}));
  net.w.add("out/w", conv_init(1, c1, 3));
  net.w.add("out/b", Tensor::zeros({1}));
  return net;
}

InnerModel InnerModel::init_classifier(int image_size, int num_classes, int base_channels,
                                       std::uint64_t seed) {
  if (num_classes < 2) throw std::invalid_argument("init_classifier: need >= 2 classes");
  InnerModel net;
  net.kind = InnerKind::Classifier;
  net.image_size = image_size;
  net.num_classes = num_classes;
  net.base_channels = base_channels;
  const std::vector<int> chans = conv_channels(image_size, base_channels);
  const int downs = static_cast<int>(chans.size());
  const int s = spatial_after(image_size, downs);
  const int flat = chans.back() * s * s;
  Rng rng(seed);
  int in_ch = 1;
  for (int k = 0; k < downs; ++k) {
    const float bound = std::sqrt(1.0f / static_cast<float>(in_ch * 16));
    net.w.add("conv" + std::to_string(k) + "/w",
              uniform_tensor(rng, {chans[k], in_ch, 4, 4}, bound));
    net.w.add("conv" + std::to_string(k) + "/b", Tensor::zeros({chans[k]}));
    in_ch = chans[k];
  }
  net.w.add("fc1/w", uniform_tensor(rng, {flat, 64}, std::sqrt(1.0f / static_cast<float>(flat))));
  net.w.add("fc1/b", Tensor::zeros({64}));
  net.w.add("fc2/w", uniform_tensor(rng, {64, num_classes}, std::sqrt(1.0f / 64.0f)));
  net.w.add("fc2/b", Tensor::zeros({num_classes}));
  return net;
}

NamedTensors InnerModel::to_named() const {
  NamedTensors named;
  add_meta(named, "net", 3.0f);
  add_meta(named, "kind", kind == InnerKind::Segmenter ? 0.0f : 1.0f);
  add_meta(named, "image_size", static_cast<float>(image_size));
  add_meta(named, "num_classes", static_cast<float>(num_classes));
  add_meta(named, "base_channels", static_cast<float>(base_channels));
  for (const auto& [name, t] : w.items) named.add(name, t);
  return named;
}

InnerModel InnerModel::from_named(const NamedTensors& named) {
  const int kind = meta_int(named, "kind");
  InnerModel net =
      kind == 0
          ? init_segmenter(meta_int(named, "image_size"), meta_int(named, "base_channels"), 0)
          : init_classifier(meta_int(named, "image_size"), meta_int(named, "num_classes"),
                            meta_int(named, "base_channels"), 0);
  fill_weights(net.w, named);
  return net;
}

namespace {

Tape::NodeId segmenter_logits(Tape& t, const std::vector<Tape::NodeId>& ids, Tape::NodeId x) {
  std::size_t s = 0;
  auto next = [&]() {
    const std::size_t k = s;
    s += 2;
    return k;
  };
  const std::size_t e1 = next(), d1 = next(), e2 = next(), d2 = next(), e3 = next(),
                    u2 = next(), f2 = next(), u1 = next(), f1 = next(), out = next();
  const Tape::NodeId a1 = t.relu(conv_block(t, x, ids[e1], ids[e1 + 1], 1, 1));
  const Tape::NodeId b1 = t.relu(conv_block(t, a1, ids[d1], ids[d1 + 1], 2, 1));
  const Tape::NodeId a2 = t.relu(conv_block(t, b1, ids[e2], ids[e2 + 1], 1, 1));
  const Tape::NodeId b2 = t.relu(conv_block(t, a2, ids[d2], ids[d2 + 1], 2, 1));
  const Tape::NodeId a3 = t.relu(conv_block(t, b2, ids[e3], ids[e3 + 1], 1, 1));
  const Tape::NodeId r2 = t.relu(convt_block(t, a3, ids[u2], ids[u2 + 1], 2, 1));
  const Tape::NodeId c2 = t.concat(r2, a2, 0);
  const Tape::NodeId g2 = t.relu(conv_block(t, c2, ids[f2], ids[f2 + 1], 1, 1));
  const Tape::NodeId r1 = t.relu(convt_block(t, g2, ids[u1], ids[u1 + 1], 2, 1));
  const Tape::NodeId c1 = t.concat(r1, a1, 0);
  const Tape::NodeId g1 = t.relu(conv_block(t, c1, ids[f1], ids[f1 + 1], 1, 1));
  return conv_block(t, g1, ids[out], ids[out + 1], 1, 1);
}

Tape::NodeId classifier_logits(Tape& t, const InnerModel& net,
                               const std::vector<Tape::NodeId>& ids, Tape::NodeId x) {
  const std::vector<int> chans = conv_channels(net.image_size, net.base_channels);
  const int downs = static_cast<int>(chans.size());
  const int s = spatial_after(net.image_size, downs);
  const int flat = chans.back() * s * s;
  Tape::NodeId cur = x;
  std::size_t slot = 0;
  for (int k = 0; k < downs; ++k, slot += 2) {
    cur = lrelu(t, conv_block(t, cur, ids[slot], ids[slot + 1], 2, 1));
  }
  cur = t.reshape(cur, {1, flat});
  cur = t.relu(linear(t, cur, ids[slot], ids[slot + 1]));
  return linear(t, cur, ids[slot + 2], ids[slot + 3]);
}

// Numerically stable pieces assembled from the primitive set.
Tape::NodeId bce_with_logits(Tape& t, Tape::NodeId logits, Tape::NodeId target,
                             const std::vector<int>& shape) {
  const Tape::NodeId abs_z = t.add(t.relu(logits), t.relu(t.mul(logits, scalar_const(t, -1.0f))));
  const Tape::NodeId ones = t.constant(Tensor::full(shape, 1.0f));
  const Tape::NodeId softplus =
      t.log(t.add(ones, t.exp(t.mul(abs_z, scalar_const(t, -1.0f)))));
  const Tape::NodeId px = t.add(t.sub(t.relu(logits), t.mul(logits, target)), softplus);
  return t.mean(px);
}

Tape::NodeId ce_with_logits(Tape& t, Tape::NodeId logits, int label, int num_classes) {
  // Shift by the current max logit (a record-time constant); keeps the
  // exponentials bounded without changing the gradient.
  const Tensor& lv = t.value(logits);
  float m = lv.data[0];
  for (float v : lv.data) m = std::max(m, v);
  const Tape::NodeId shifted = t.sub(logits, scalar_const(t, m));
  const Tape::NodeId lse = t.log(t.sum(t.exp(shifted)));
  Tensor onehot = Tensor::zeros({1, num_classes});
  onehot.data[static_cast<std::size_t>(label)] = 1.0f;
  const Tape::NodeId zy = t.sum(t.mul(shifted, t.constant(std::move(onehot))));
  return t.sub(lse, zy);
}

}  // namespace

Tape::NodeId build_inner_logits(Tape& tape, const InnerModel& net,
                                const std::vector<Tape::NodeId>& ids, Tape::NodeId x_node) {
  if (ids.size() != net.w.count()) {
    throw std::invalid_argument("build_inner_logits: weight id count mismatch");
  }
  return net.kind == InnerKind::Segmenter ? segmenter_logits(tape, ids, x_node)
                                          : classifier_logits(tape, net, ids, x_node);
}

Image segment_probs(const InnerModel& net, const Image& x) {
  if (net.kind != InnerKind::Segmenter) {
    throw std::invalid_argument("segment_probs: model is not a segmenter");
  }
  Tape tape;
  const auto ids = insert_weights(tape, net.w, false);
  Tensor xt = Tensor::zeros({1, x.height, x.width});
  xt.data = x.data;
  const Tape::NodeId probs =
      tape.sigmoid(build_inner_logits(tape, net, ids, tape.constant(std::move(xt))));
  Image out(x.height, x.width);
  out.data = tape.value(probs).data;
  return out;
}

std::vector<float> classify_logits(const InnerModel& net, const Image& x) {
  if (net.kind != InnerKind::Classifier) {
    throw std::invalid_argument("classify_logits: model is not a classifier");
  }
  Tape tape;
  const auto ids = insert_weights(tape, net.w, false);
  Tensor xt = Tensor::zeros({1, x.height, x.width});
  xt.data = x.data;
  const Tape::NodeId logits = build_inner_logits(tape, net, ids, tape.constant(std::move(xt)));
  return tape.value(logits).data;
}

int argmax_class(const std::vector<float>& logits) {
  if (logits.empty()) throw std::invalid_argument("argmax_class: empty logits");
  int best = 0;
  for (int k = 1; k < static_cast<int>(logits.size()); ++k) {
    if (logits[static_cast<std::size_t>(k)] > logits[static_cast<std::size_t>(best)]) best = k;
  }
  return best;
}

std::vector<float> train_inner(InnerModel& net, const std::vector<InnerSample>& train,
                               const TrainConfig& cfg) {
  cfg.validate();
  if (train.empty()) throw std::invalid_argument("train_inner: empty training set");
  for (const InnerSample& s : train) {
    if (s.image.height != net.image_size || s.image.width != net.image_size) {
      throw std::invalid_argument("train_inner: image does not match the model size");
    }
    if (net.kind == InnerKind::Segmenter && !s.mask.same_shape(Mask(net.image_size, net.image_size))) {
      throw std::invalid_argument("train_inner: mask shape mismatch");
    }
    if (net.kind == InnerKind::Classifier &&
        (s.label < 0 || s.label >= net.num_classes)) {
      throw std::invalid_argument("train_inner: label out of range");
    }
  }
  Adam opt(cfg.lr);
  std::vector<float> epoch_losses;
  const int n = static_cast<int>(train.size());
  for (int e = 0; e < cfg.epochs; ++e) {
    Rng rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(e)));
    std::vector<int> order(n);
    for (int i = 0; i < n; ++i) order[i] = i;
    for (int i = n - 1; i > 0; --i) std::swap(order[i], order[rng.uniform_int(0, i)]);
    double loss_sum = 0.0;
    for (int start = 0; start < n; start += cfg.batch) {
      const int b = std::min(cfg.batch, n - start);
      Tape tape;
      const auto ids = insert_weights(tape, net.w, true);
      Tape::NodeId batch_loss = Tape::kInvalid;
      for (int k = 0; k < b; ++k) {
        const InnerSample& s = train[order[start + k]];
        Tensor xt = Tensor::zeros({1, net.image_size, net.image_size});
        xt.data = s.image.data;
        const Tape::NodeId logits =
            build_inner_logits(tape, net, ids, tape.constant(std::move(xt)));
        Tape::NodeId loss;
        if (net.kind == InnerKind::Segmenter) {
          Tensor tt = Tensor::zeros({1, net.image_size, net.image_size});
          for (std::size_t px = 0; px < s.mask.data.size(); ++px) {
            tt.data[px] = s.mask.data[px] ? 1.0f : 0.0f;
          }
          loss = bce_with_logits(tape, logits, tape.constant(std::move(tt)),
                                 {1, net.image_size, net.image_size});
        } else {
          loss = ce_with_logits(tape, logits, s.label, net.num_classes);
        }
        batch_loss = batch_loss == Tape::kInvalid ? loss : tape.add(batch_loss, loss);
      }
      const Tape::NodeId loss =
          tape.mul(batch_loss, scalar_const(tape, 1.0f / static_cast<float>(b)));
      tape.backward(loss);
      std::vector<Tensor> grads;
      grads.reserve(ids.size());
      for (Tape::NodeId id : ids) grads.push_back(tape.grad(id));
      opt.step(net.w, grads);
      loss_sum += static_cast<double>(tape.value(loss).data[0]) * b;
    }
    epoch_losses.push_back(static_cast<float>(loss_sum / n));
  }
  return epoch_losses;
}

// ---------------------------------------------------------------------------
// Genus oracle

int genus_oracle(const Mask& mask) {
  if (mask.empty()) throw std::invalid_argument("genus_oracle: empty mask");
  const int h = mask.height;
  const int w = mask.width;
  std::vector<std::int32_t> comp(static_cast<std::size_t>(h) * w, -1);
  std::vector<std::size_t> stack;
  int n_components = 0;
  int n_border = 0;
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      const std::size_t k0 = static_cast<std::size_t>(i) * w + j;
      if (mask.data[k0] != 0 || comp[k0] != -1) continue;
      const int id = n_components++;
      bool touches_border = false;
      comp[k0] = id;
      stack.clear();
      stack.push_back(k0);
      while (!stack.empty()) {
        const std::size_t k = stack.back();
        stack.pop_back();
        const int y = static_cast<int>(k) / w;
        const int x = static_cast<int>(k) % w;
        if (y == 0 || x == 0 || y == h - 1 || x == w - 1) touches_border = true;
        const int dy[4] = {-1, 1, 0, 0};
        const int dx[4] = {0, 0, -1, 1};
        for (int d = 0; d < 4; ++d) {
          const int ny = y + dy[d];
          const int nx = x + dx[d];
          if (ny < 0 || nx < 0 || ny >= h || nx >= w) continue;
          const std::size_t nk = static_cast<std::size_t>(ny) * w + nx;
          if (mask.data[nk] == 0 && comp[nk] == -1) {
            comp[nk] = id;
            stack.push_back(nk);
          }
        }
      }
      if (touches_border) ++n_border;
    }
  }
  return n_components - n_border;
}

}  // namespace diffeocan
