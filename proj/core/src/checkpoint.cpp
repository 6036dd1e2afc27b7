// SPDX-License-Identifier: Apache-2.0
#include "iga/checkpoint.hpp"

#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <sstream>

namespace iga {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'I', 'G', 'A', 'C', 'K', 'P', 'T', '\0'};

std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

class Writer {
 public:
  template <class T>
  void put(T v) {
    char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    out_.append(b, sizeof(T));
  }
  void put_bytes(const std::string& s) { out_ += s; }
  void put_values(std::span<const real> values) {
    out_.append(reinterpret_cast<const char*>(values.data()), values.size_bytes());
  }
  const std::string& bytes() const { return out_; }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(std::string_view bytes) : in_(bytes) {}
  template <class T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, in_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string get_bytes(std::size_t n) {
    need(n);
    std::string s(in_.substr(pos_, n));
    pos_ += n;
    return s;
  }
  std::vector<real> get_values(std::size_t count, std::uint32_t real_bytes) {
    std::vector<real> out(count);
    if (real_bytes == sizeof(real)) {
      need(count * sizeof(real));
      std::memcpy(out.data(), in_.data() + pos_, count * sizeof(real));
      pos_ += count * sizeof(real);
    } else if (real_bytes == 4) {
      for (auto& v : out) v = static_cast<real>(get<float>());
    } else {
      for (auto& v : out) v = static_cast<real>(get<double>());
    }
    return out;
  }
  std::size_t position() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > in_.size()) throw CheckpointError("checkpoint is truncated");
  }
  std::string_view in_;
  std::size_t pos_ = 0;
};

struct Blob {
  Shape shape;
  std::vector<real> values;
};

void put_blob(Writer& w, const std::string& name, const Shape& shape, std::span<const real> values) {
  w.put<std::uint32_t>(static_cast<std::uint32_t>(name.size()));
  w.put_bytes(name);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(shape.size()));
  for (auto d : shape) w.put<std::uint64_t>(d);
  w.put<std::uint64_t>(values.size());
  w.put_values(values);
}

std::string get(const std::map<std::string, std::string>& kv, const std::string& key) {
  auto it = kv.find(key);
  if (it == kv.end()) throw CheckpointError("checkpoint config lacks '" + key + "'");
  return it->second;
}

std::size_t get_size(const std::map<std::string, std::string>& kv, const std::string& key) {
  return static_cast<std::size_t>(std::stoull(get(kv, key)));
}

double get_double(const std::map<std::string, std::string>& kv, const std::string& key) {
  return std::stod(get(kv, key));
}

void add_adam(std::map<std::string, Blob>& blobs, const char* prefix,
              std::span<const NamedTensor> params, AdamState& st) {
  if (st.first.empty()) return;
  for (std::size_t i = 0; i < params.size(); ++i) {
    blobs[std::string(prefix) + ".m/" + params[i].name] = {params[i].tensor->shape(), st.first[i]};
    blobs[std::string(prefix) + ".v/" + params[i].name] = {params[i].tensor->shape(), st.second[i]};
  }
}

void restore_adam(const std::map<std::string, Blob>& blobs, const char* prefix,
                  std::span<const NamedTensor> params, AdamState& st, std::uint64_t steps) {
  st = AdamState{};
  st.steps = steps;
  if (steps == 0) return;
  for (const auto& p : params) {
    auto m = blobs.find(std::string(prefix) + ".m/" + p.name);
    auto v = blobs.find(std::string(prefix) + ".v/" + p.name);
    if (m == blobs.end() || v == blobs.end()) {
      throw CheckpointError("checkpoint lacks optimizer moments for " + p.name);
    }
    st.first.push_back(m->second.values);
    st.second.push_back(v->second.values);
  }
}

}  // namespace

std::map<std::string, std::string> checkpoint_config(const TrainState& state) {
  const auto& n = state.model.config;
  const auto& c = state.config;
  std::map<std::string, std::string> kv;
  kv["net.height"] = std::to_string(n.height);
  kv["net.width"] = std::to_string(n.width);
  kv["net.channels"] = std::to_string(n.channels);
  kv["net.base_width"] = std::to_string(n.base_width);
  kv["net.extractor_blocks"] = std::to_string(n.extractor_blocks);
  kv["net.embedder_blocks"] = std::to_string(n.embedder_blocks);
  kv["net.decoder_blocks"] = std::to_string(n.decoder_blocks);
  kv["net.discriminator_blocks"] = std::to_string(n.discriminator_blocks);
  kv["net.k"] = std::to_string(n.k);
  kv["net.l"] = std::to_string(n.l);
  kv["net.codec_hidden"] = std::to_string(n.use_msgcodec ? state.model.codec.hidden : n.codec_hidden);
  kv["net.use_msgcodec"] = n.use_msgcodec ? "1" : "0";
  kv["train.lambda_mr"] = format_double(c.weights.message_reconstruction);
  kv["train.lambda_md"] = format_double(c.weights.message_decoding);
  kv["train.lambda_i"] = format_double(c.weights.image);
  kv["train.lambda_d"] = format_double(c.weights.discriminator);
  kv["train.lambda_g"] = format_double(c.weights.generator);
  kv["train.channel"] = c.channel.to_string();
  kv["train.mask"] = std::string(to_string(c.mask));
  kv["train.use_attention"] = c.use_attention() ? "1" : "0";
  kv["train.normalization"] = std::string(to_string(c.normalization));
  kv["train.batch_size"] = std::to_string(c.batch_size);
  kv["train.learning_rate"] = format_double(c.learning_rate);
  kv["train.epochs"] = std::to_string(c.epochs);
  kv["train.clip_norm"] = format_double(c.clip_norm);
  kv["train.seed"] = std::to_string(c.seed);
  kv["state.epoch"] = std::to_string(state.epoch);
  kv["state.step"] = std::to_string(state.step);
  kv["state.best_val_bpa"] = format_double(state.best_val_bpa);
  kv["state.rng"] = state.rng.serialize();
  kv["state.gen_adam_steps"] = std::to_string(state.generator_opt.steps);
  kv["state.disc_adam_steps"] = std::to_string(state.discriminator_opt.steps);
  return kv;
}

void save_checkpoint(const std::filesystem::path& path, TrainState& state) {
  Writer w;
  w.put_bytes(std::string(kMagic, sizeof kMagic));
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put<std::uint32_t>(sizeof(real));
  std::string config;
  for (const auto& [k, v] : checkpoint_config(state)) config += k + "=" + v + "\n";
  w.put<std::uint64_t>(config.size());
  w.put_bytes(config);

  std::map<std::string, Blob> blobs;
  auto gen = state.model.generator_params();
  auto disc = state.model.discriminator_params();
  for (const auto& p : gen) blobs["param/" + p.name] = {p.tensor->shape(), {p.tensor->data().begin(), p.tensor->data().end()}};
  for (const auto& p : disc) blobs["param/" + p.name] = {p.tensor->shape(), {p.tensor->data().begin(), p.tensor->data().end()}};
  for (const auto& b : state.model.buffers()) blobs["buffer/" + b.name] = {{b.values->size()}, *b.values};
  add_adam(blobs, "adam.gen", gen, state.generator_opt);
  add_adam(blobs, "adam.disc", disc, state.discriminator_opt);

  w.put<std::uint32_t>(static_cast<std::uint32_t>(blobs.size()));
  for (const auto& [name, blob] : blobs) put_blob(w, name, blob.shape, blob.values);
  const std::uint64_t sum = fnv1a(w.bytes());
  w.put<std::uint64_t>(sum);

  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw CheckpointError("cannot open " + tmp.string() + " for writing");
    f.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
    if (!f) throw CheckpointError("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

TrainState load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot open checkpoint " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (bytes.size() < sizeof kMagic + 8 || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
    throw CheckpointError(path.string() + " is not a checkpoint (bad magic or truncated)");
  }
  Reader r(bytes);
  r.get_bytes(sizeof kMagic);
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw CheckpointError("checkpoint version " + std::to_string(version) + " unsupported (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  }
  const auto real_bytes = r.get<std::uint32_t>();
  if (real_bytes != 4 && real_bytes != 8) throw CheckpointError("corrupt checkpoint: value width");
  const auto config_len = r.get<std::uint64_t>();
  if (config_len > bytes.size()) throw CheckpointError("checkpoint is truncated");
  const auto config = r.get_bytes(config_len);
  const auto count = r.get<std::uint32_t>();
  std::map<std::string, Blob> blobs;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = r.get<std::uint32_t>();
    if (name_len > bytes.size()) throw CheckpointError("checkpoint is truncated");
    auto name = r.get_bytes(name_len);
    Blob b;
    const auto rank = r.get<std::uint32_t>();
    if (rank > 8) throw CheckpointError("corrupt checkpoint: blob rank");
    for (std::uint32_t d = 0; d < rank; ++d) b.shape.push_back(r.get<std::uint64_t>());
    const auto n = r.get<std::uint64_t>();
    if (n != numel(b.shape) || n * real_bytes > bytes.size()) {
      throw CheckpointError("corrupt checkpoint: blob " + name);
    }
    b.values = r.get_values(n, real_bytes);
    blobs.emplace(std::move(name), std::move(b));
  }
  const std::size_t body = r.position();
  const auto stored = r.get<std::uint64_t>();
  if (stored != fnv1a(bytes.substr(0, body))) throw CheckpointError("checkpoint checksum mismatch");

  std::map<std::string, std::string> kv;
  std::istringstream lines(config);
  for (std::string line; std::getline(lines, line);) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }

  NetConfig net;
  net.height = get_size(kv, "net.height");
  net.width = get_size(kv, "net.width");
  net.channels = get_size(kv, "net.channels");
  net.base_width = get_size(kv, "net.base_width");
  net.extractor_blocks = get_size(kv, "net.extractor_blocks");
  net.embedder_blocks = get_size(kv, "net.embedder_blocks");
  net.decoder_blocks = get_size(kv, "net.decoder_blocks");
  net.discriminator_blocks = get_size(kv, "net.discriminator_blocks");
  net.k = get_size(kv, "net.k");
  net.l = get_size(kv, "net.l");
  net.codec_hidden = get_size(kv, "net.codec_hidden");
  net.use_msgcodec = get(kv, "net.use_msgcodec") == "1";

  TrainConfig cfg;
  cfg.weights.message_reconstruction = static_cast<real>(get_double(kv, "train.lambda_mr"));
  cfg.weights.message_decoding = static_cast<real>(get_double(kv, "train.lambda_md"));
  cfg.weights.image = static_cast<real>(get_double(kv, "train.lambda_i"));
  cfg.weights.discriminator = static_cast<real>(get_double(kv, "train.lambda_d"));
  cfg.weights.generator = static_cast<real>(get_double(kv, "train.lambda_g"));
  cfg.channel = ChannelConfig::parse(get(kv, "train.channel"));
  cfg.mask = parse_mask_source(get(kv, "train.mask"));
  cfg.normalization = parse_normalization(get(kv, "train.normalization"));
  cfg.batch_size = get_size(kv, "train.batch_size");
  cfg.learning_rate = get_double(kv, "train.learning_rate");
  cfg.epochs = get_size(kv, "train.epochs");
  cfg.clip_norm = get_double(kv, "train.clip_norm");
  cfg.seed = std::stoull(get(kv, "train.seed"));

  TrainState state = make_train_state(net, cfg);
  state.epoch = get_size(kv, "state.epoch");
  state.step = get_size(kv, "state.step");
  state.best_val_bpa = get_double(kv, "state.best_val_bpa");
  state.rng = Rng::deserialize(get(kv, "state.rng"));

  auto assign = [&](const std::string& key, const Shape& shape, std::span<real> dst) {
    auto it = blobs.find(key);
    if (it == blobs.end()) throw CheckpointError("checkpoint lacks " + key);
    if (it->second.shape != shape) {
      throw CheckpointError("shape mismatch for " + key + ": stored " + to_string(it->second.shape) +
                            ", model " + to_string(shape));
    }
    std::copy(it->second.values.begin(), it->second.values.end(), dst.begin());
  };
  auto gen = state.model.generator_params();
  auto disc = state.model.discriminator_params();
  for (auto& p : gen) assign("param/" + p.name, p.tensor->shape(), p.tensor->mutable_data());
  for (auto& p : disc) assign("param/" + p.name, p.tensor->shape(), p.tensor->mutable_data());
  for (auto& b : state.model.buffers()) assign("buffer/" + b.name, {b.values->size()}, *b.values);
  restore_adam(blobs, "adam.gen", gen, state.generator_opt,
               std::stoull(get(kv, "state.gen_adam_steps")));
  restore_adam(blobs, "adam.disc", disc, state.discriminator_opt,
               std::stoull(get(kv, "state.disc_adam_steps")));
  return state;
}

}  // namespace iga
