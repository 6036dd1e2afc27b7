// SPDX-License-Identifier: Apache-2.0
#include "iga_cli/cli.hpp"

#include <CLI11.hpp>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <nlohmann/json.hpp>
#include <ostream>
#include <sstream>

#include "iga/checkpoint.hpp"
#include "iga/evaluate.hpp"
#include "iga/metrics.hpp"
#include "iga/train.hpp"
#include "iga/version.hpp"

namespace iga::cli {
namespace {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Options

struct DataArgs {
  std::string root;
  std::size_t limit = 0;
  double val_fraction = 0.1;
};

struct TrainArgs {
  std::string config;
  std::string out = "runs/train";
  DataArgs data;
  NetConfig net;
  TrainConfig train;
  std::string noise = "combined";
  std::string mask = "iga";
  std::string normalization = "minmax";
  double lambda_mr = 1.0, lambda_md = 0.001, lambda_i = 0.7, lambda_d = 1.0, lambda_g = 0.001;
  bool no_attention = false;
  bool no_msgcodec = false;
  bool resume = false;
};

struct MessageArgs {
  std::string bits;
  std::string hex;
};

struct EvalArgs {
  std::string config;
  std::string checkpoint;
  std::string out = "runs/eval";
  DataArgs data;
  std::string split = "val";
  std::vector<std::string> noise;
  std::uint64_t seed = 0;
  std::size_t batch_size = 32;
  std::size_t k = 0, l = 0, height = 0, width = 0;  // 0 = take from checkpoint
};

struct EmbedArgs {
  std::string config;
  std::string checkpoint;
  std::string image;
  std::string output;
  MessageArgs message;
};

struct ExtractArgs {
  std::string config;
  std::string checkpoint;
  std::string image;
  std::string out = ".";
};

struct VisualizeArgs {
  std::string config;
  std::string checkpoint;
  std::string image;
  std::string out = "runs/visualize";
  MessageArgs message;
  std::uint64_t seed = 0;
};

void add_data_options(CLI::App* app, DataArgs& d, bool required) {
  auto* o = app->add_option("--data", d.root, "Dataset root (train/ and val/ subfolders, or flat)");
  if (required) o->required();
  app->add_option("--limit", d.limit, "Use at most this many images per split (0 = all)");
  app->add_option("--val-fraction", d.val_fraction, "Validation share of a flat folder")
      ->check(CLI::Range(0.0, 1.0));
}

void add_train_options(CLI::App* app, TrainArgs& a, bool ablation_flags) {
  app->add_option("--config", a.config, "key=value file; command-line flags take precedence");
  app->add_option("--out", a.out, "Output directory");
  add_data_options(app, a.data, true);
  auto& n = a.net;
  auto& t = a.train;
  app->add_option("--height", n.height, "Image height");
  app->add_option("--width", n.width, "Image width");
  app->add_option("--k", n.k, "Message length in bits");
  app->add_option("--l", n.l, "Coded message length");
  app->add_option("--codec-hidden", n.codec_hidden, "Message coder hidden width (0 = 2k)");
  app->add_option("--base-width", n.base_width, "Convolution channels");
  app->add_option("--extractor-blocks", n.extractor_blocks);
  app->add_option("--embedder-blocks", n.embedder_blocks);
  app->add_option("--decoder-blocks", n.decoder_blocks);
  app->add_option("--discriminator-blocks", n.discriminator_blocks);
  app->add_option("--mask", a.mask, "Attention source: iga, sobel or none");
  app->add_option("--normalization", a.normalization, "Gradient normalisation: minmax or sigmoid");
  app->add_option("--noise", a.noise, "Training channel, e.g. identity, jpeg:q=50, combined");
  app->add_option("--epochs", t.epochs);
  app->add_option("--batch-size", t.batch_size);
  app->add_option("--lr", t.learning_rate, "Adam step size");
  app->add_option("--clip-norm", t.clip_norm, "Global gradient norm limit (0 = off)");
  app->add_option("--seed", t.seed);
  app->add_option("--lambda-mr", a.lambda_mr);
  app->add_option("--lambda-md", a.lambda_md);
  app->add_option("--lambda-i", a.lambda_i);
  app->add_option("--lambda-d", a.lambda_d);
  app->add_option("--lambda-g", a.lambda_g);
  if (ablation_flags) {
    app->add_flag("--no-attention", a.no_attention, "Skip the attention stage (all-ones mask)");
    app->add_flag("--no-msgcodec", a.no_msgcodec, "Embed the raw k-bit message");
    app->add_flag("--resume", a.resume, "Continue from <out>/last.ckpt");
  }
}

void add_message_options(CLI::App* app, MessageArgs& m) {
  auto* b = app->add_option("--bits", m.bits, "Message as a 0/1 string");
  auto* h = app->add_option("--hex", m.hex, "Message as hex digits (first k bits are used)");
  b->excludes(h);
}

// Applies a key=value file to options that were not given on the command line.
void apply_config(CLI::App* app, const std::string& path) {
  if (path.empty()) return;
  if (!fs::exists(path)) throw UsageError("config file not found: " + path);
  CLI::ConfigINI reader;
  std::vector<CLI::ConfigItem> items;
  try {
    items = reader.from_file(path);
  } catch (const CLI::Error& e) {
    throw UsageError("cannot parse config file " + path + ": " + e.what());
  }
  for (const auto& item : items) {
    if (item.name == "++" || item.name == "--") continue;
    const std::string key = item.fullname();
    CLI::Option* opt = app->get_option_no_throw("--" + key);
    if (opt == nullptr || key == "config") {
      throw UsageError("unknown config key '" + key + "' in " + path);
    }
    if (opt->count() > 0) continue;
    try {
      opt->add_result(item.inputs);
      opt->run_callback();
    } catch (const CLI::Error& e) {
      throw UsageError("invalid value for config key '" + key + "': " + e.what());
    }
  }
}

// Effective value of every long option, for the manifest.
json effective_options(const CLI::App* app) {
  json j = json::object();
  for (const CLI::Option* o : app->get_options()) {
    if (o->get_lnames().empty() || o->get_lnames()[0] == "help") continue;
    const auto& res = o->results();
    std::string value;
    if (!res.empty()) {
      for (std::size_t i = 0; i < res.size(); ++i) value += (i ? "," : "") + res[i];
    } else {
      value = o->get_default_str();
    }
    j[o->get_lnames()[0]] = value;
  }
  return j;
}

json versions_json() {
  json j = json::object();
  for (const auto& [k, v] : build_info()) j[k] = v;
  return j;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
  f << text;
  if (!f) throw IoError("failed writing " + path.string());
}

void write_manifest(const fs::path& path, const std::string& command,
                    const std::vector<std::string>& args, const CLI::App* app, json extra) {
  json j;
  j["command"] = command;
  j["args"] = args;
  j["options"] = effective_options(app);
  for (auto& [k, v] : extra.items()) j[k] = v;
  j["versions"] = versions_json();
  write_text(path, j.dump(2) + "\n");
}

json config_json(const TrainState& state) {
  json j = json::object();
  for (const auto& [k, v] : checkpoint_config(state)) {
    if (k.rfind("state.", 0) != 0) j[k] = v;
  }
  return j;
}

TrainConfig resolve_train_config(const TrainArgs& a) {
  TrainConfig t = a.train;
  t.weights = {static_cast<real>(a.lambda_mr), static_cast<real>(a.lambda_md),
               static_cast<real>(a.lambda_i), static_cast<real>(a.lambda_d),
               static_cast<real>(a.lambda_g)};
  t.channel = ChannelConfig::parse(a.noise);
  t.mask = parse_mask_source(a.mask);
  t.normalization = parse_normalization(a.normalization);
  if (a.no_attention) {
    if (t.mask != MaskSource::iga && t.mask != MaskSource::ones) {
      throw UsageError("--no-attention conflicts with --mask " + a.mask);
    }
    t.mask = MaskSource::ones;
  }
  t.validate();
  return t;
}

NetConfig resolve_net_config(const TrainArgs& a) {
  NetConfig n = a.net;
  if (a.no_msgcodec) n.use_msgcodec = false;
  n.validate();
  return n;
}

DatasetSpec dataset_spec(const DataArgs& d, Split split, std::size_t h, std::size_t w,
                         std::uint64_t seed) {
  DatasetSpec s;
  s.root = d.root;
  s.split = split;
  s.height = h;
  s.width = w;
  s.limit = d.limit;
  s.seed = seed;
  s.val_fraction = d.val_fraction;
  return s;
}

json data_json(const DataArgs& d, const Dataset& train, const Dataset& val) {
  return {{"root", d.root},
          {"limit", d.limit},
          {"val_fraction", d.val_fraction},
          {"train_images", train.size()},
          {"val_images", val.size()}};
}

const char* kLogHeader =
    "epoch\tl_mr\tl_md\tl_img\tl_gadv\tl_disc\tl_gen_total\ttrain_bpa\ttrain_psnr\tval_bpa\tbest";

std::string log_line(const EpochLog& e) {
  std::ostringstream os;
  os << std::setprecision(10) << e.epoch << '\t' << e.mean.message_reconstruction << '\t'
     << e.mean.message_decoding << '\t' << e.mean.image << '\t' << e.mean.generator_adversarial
     << '\t' << e.mean.discriminator << '\t' << e.mean.generator_total << '\t' << e.mean.bpa
     << '\t' << e.mean.psnr << '\t' << e.val_bpa << '\t' << (e.best ? 1 : 0);
  return os.str();
}

// Keeps the header and the rows of epochs <= last_epoch.
void truncate_log(const fs::path& path, std::size_t last_epoch) {
  std::ifstream in(path);
  std::string line, kept;
  bool header = true;
  while (std::getline(in, line)) {
    if (header) {
      kept += line + "\n";
      header = false;
      continue;
    }
    if (line.empty()) continue;
    if (std::stoull(line.substr(0, line.find('\t'))) <= last_epoch) kept += line + "\n";
  }
  in.close();
  write_text(path, kept.empty() ? std::string(kLogHeader) + "\n" : kept);
}

// Trains `state` with checkpoints and a per-epoch TSV log in `dir`.
fs::path train_into(TrainState& state, const Dataset& train, const Dataset& val,
                    const fs::path& dir, bool append, std::ostream& out) {
  fs::create_directories(dir);
  const auto log_path = dir / "train_log.tsv";
  if (append && fs::exists(log_path)) {
    truncate_log(log_path, state.epoch);
  } else {
    write_text(log_path, std::string(kLogHeader) + "\n");
  }
  std::ofstream log(log_path, std::ios::app);
  FitOptions opts;
  opts.checkpoint_dir = dir;
  auto started = std::chrono::steady_clock::now();
  const auto total = state.config.epochs;
  opts.on_epoch = [&](const EpochLog& e) {
    log << log_line(e) << '\n';
    log.flush();
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    out << "epoch " << e.epoch << "/" << total << std::fixed << std::setprecision(4)
        << "  l_mr " << e.mean.message_reconstruction << "  bpa " << e.mean.bpa << "  val_bpa "
        << e.val_bpa << std::setprecision(2) << "  psnr " << e.mean.psnr << "  " << secs << "s"
        << (e.best ? "  *" : "") << '\n';
    out.unsetf(std::ios::floatfield);
    out.flush();
  };
  return fit(state, train, val, opts);
}

BitMessage parse_message(const MessageArgs& m, std::size_t k) {
  BitMessage msg;
  if (!m.bits.empty()) {
    msg = BitMessage::from_string(m.bits);
  } else if (!m.hex.empty()) {
    if (m.hex.size() * 4 < k) {
      throw UsageError("hex message has " + std::to_string(m.hex.size() * 4) +
                       " bits; the checkpoint expects k=" + std::to_string(k));
    }
    msg = BitMessage::from_hex(m.hex, k);
  } else {
    throw UsageError("a message is required (--bits or --hex)");
  }
  if (msg.size() != k) {
    throw UsageError("message has " + std::to_string(msg.size()) +
                     " bits; the checkpoint expects k=" + std::to_string(k));
  }
  return msg;
}

Image load_for_model(const std::string& path, const NetConfig& net, std::ostream& err) {
  Image img = read_image(path);
  if (img.height != net.height || img.width != net.width) {
    err << "warning: resizing " << path << " from " << img.width << "x" << img.height << " to "
        << net.width << "x" << net.height << '\n';
    img = resize_image(img, net.height, net.width);
  }
  return img;
}

// ---------------------------------------------------------------------------
// Commands

int cmd_train(TrainArgs& a, const CLI::App* app, const std::vector<std::string>& args,
              std::ostream& out) {
  const fs::path dir = a.out;
  TrainState state;
  std::size_t resumed_from = 0;
  if (a.resume) {
    const auto last = dir / "last.ckpt";
    if (!fs::exists(last)) throw UsageError("--resume: no checkpoint at " + last.string());
    state = load_checkpoint(last);
    if (app->get_option("--epochs")->count() > 0) state.config.epochs = a.train.epochs;
    resumed_from = state.epoch;
    out << "resuming from epoch " << state.epoch << " (" << last.string() << ")\n";
  } else {
    state = make_train_state(resolve_net_config(a), resolve_train_config(a));
  }
  const auto& net = state.model.config;
  const auto seed = state.config.seed;
  auto train = load_dataset(dataset_spec(a.data, Split::train, net.height, net.width, seed));
  auto val = load_dataset(dataset_spec(a.data, Split::val, net.height, net.width, seed));
  out << "train images: " << train.size() << ", val images: " << val.size() << '\n';

  json extra;
  extra["config"] = config_json(state);
  extra["data"] = data_json(a.data, train, val);
  extra["seed"] = seed;
  if (a.resume) extra["resumed_from_epoch"] = resumed_from;
  write_manifest(dir / "manifest.json", "train", args, app, extra);

  auto best = train_into(state, train, val, dir, a.resume, out);
  out << "best checkpoint: " << best.string() << " (val BPA " << state.best_val_bpa << ")\n";
  out << "last checkpoint: " << (dir / "last.ckpt").string() << '\n';
  out << "log: " << (dir / "train_log.tsv").string() << '\n';
  return kSuccess;
}

int cmd_evaluate(EvalArgs& a, const CLI::App* app, const std::vector<std::string>& args,
                 std::ostream& out) {
  auto state = load_checkpoint(a.checkpoint);
  const auto& net = state.model.config;
  auto check = [&](const char* key, std::size_t given, std::size_t actual) {
    if (given != 0 && given != actual) {
      throw UsageError(std::string("checkpoint/config mismatch: ") + key + "=" +
                       std::to_string(given) + " but the checkpoint has " +
                       std::to_string(actual));
    }
  };
  check("k", a.k, net.k);
  check("l", a.l, net.l);
  check("height", a.height, net.height);
  check("width", a.width, net.width);

  const Split split = a.split == "train" ? Split::train : a.split == "all" ? Split::all : Split::val;
  auto data = load_dataset(dataset_spec(a.data, split, net.height, net.width, state.config.seed));
  std::vector<ChannelConfig> channels;
  if (a.noise.empty()) {
    channels = default_eval_channels();
  } else {
    for (const auto& s : a.noise) channels.push_back(ChannelConfig::parse(s));
  }
  auto report = evaluate(state.model, state.config.mask_settings(), data, channels, a.seed,
                         a.batch_size);
  const fs::path dir = a.out;
  std::ostringstream table;
  report.write_table(table);
  write_text(dir / "report.txt", table.str());
  write_text(dir / "report.json", report.to_json() + "\n");
  json extra;
  extra["checkpoint"] = a.checkpoint;
  extra["config"] = config_json(state);
  extra["data"] = {{"root", a.data.root}, {"split", a.split}, {"images", data.size()}};
  extra["seed"] = a.seed;
  write_manifest(dir / "manifest.json", "evaluate", args, app, extra);
  out << table.str();
  return kSuccess;
}

int cmd_embed(EmbedArgs& a, const CLI::App* app, const std::vector<std::string>& args,
              std::ostream& out, std::ostream& err) {
  auto state = load_checkpoint(a.checkpoint);
  const auto& net = state.model.config;
  const auto msg = parse_message(a.message, net.k);
  const Image img = load_for_model(a.image, net, err);
  const std::vector<Image> covers{img};
  const std::vector<BitMessage> msgs{msg};
  auto cover = stack_images(covers);
  auto encoded = embed_batch(state.model, cover, stack_messages(msgs), state.config.mask_settings());
  const Image result = unstack_image(encoded, 0);
  write_image(a.output, result);
  // PSNR of what was actually written (8-bit quantised).
  const double db = psnr(cover.data(), std::span<const real>(read_image(a.output).data));
  json extra;
  extra["checkpoint"] = a.checkpoint;
  extra["image"] = a.image;
  extra["output"] = a.output;
  extra["message"] = msg.to_string();
  extra["psnr_db"] = db;
  write_manifest(fs::path(a.output).string() + ".manifest.json", "embed", args, app, extra);
  out << "wrote " << a.output << '\n';
  out << "PSNR: " << std::fixed << std::setprecision(2) << db << " dB\n";
  out.unsetf(std::ios::floatfield);
  return kSuccess;
}

int cmd_extract(ExtractArgs& a, const CLI::App* app, const std::vector<std::string>& args,
                std::ostream& out, std::ostream& err) {
  auto state = load_checkpoint(a.checkpoint);
  const std::vector<Image> imgs{load_for_model(a.image, state.model.config, err)};
  auto recovered = extract_batch(state.model, stack_images(imgs));
  const auto msg = BitMessage::binarize(recovered.data());
  json extra;
  extra["checkpoint"] = a.checkpoint;
  extra["image"] = a.image;
  extra["message"] = msg.to_string();
  write_manifest(fs::path(a.out) / "extract_manifest.json", "extract", args, app, extra);
  out << msg.to_string() << '\n';
  return kSuccess;
}

// Min-max to [0, 1]; a flat map becomes all zeros.
std::vector<double> normalized(std::span<const real> v) {
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  std::vector<double> out(v.size(), 0.0);
  const double range = static_cast<double>(*hi) - static_cast<double>(*lo);
  if (range > kDegenerateRange) {
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = (v[i] - *lo) / range;
  }
  return out;
}

int cmd_visualize(VisualizeArgs& a, const CLI::App* app, const std::vector<std::string>& args,
                  std::ostream& out, std::ostream& err) {
  auto state = load_checkpoint(a.checkpoint);
  const auto& net = state.model.config;
  BitMessage msg;
  if (a.message.bits.empty() && a.message.hex.empty()) {
    Rng rng(a.seed);
    msg = random_message(net.k, rng);
  } else {
    msg = parse_message(a.message, net.k);
  }
  const std::vector<Image> covers{load_for_model(a.image, net, err)};
  const std::vector<BitMessage> msgs{msg};
  auto cover = stack_images(covers);
  MaskSettings settings = state.config.mask_settings();
  settings.source = MaskSource::iga;
  auto iga = compute_mask(state.model, cover, stack_messages(msgs), settings, nullptr,
                          JpegMode::eval_real, Mode::eval());
  auto sobel = sobel_mask(cover);

  const auto a_n = normalized(iga.values.data());
  const auto s_n = normalized(sobel.values.data());
  double diff = 0;
  for (std::size_t i = 0; i < a_n.size(); ++i) diff += std::abs(a_n[i] - s_n[i]);
  diff /= static_cast<double>(a_n.size());

  const fs::path dir = a.out;
  fs::create_directories(dir);
  write_image(dir / "iga_mask.png", unstack_image(iga.values, 0));
  write_image(dir / "sobel_mask.png", unstack_image(sobel.values, 0));
  json extra;
  extra["checkpoint"] = a.checkpoint;
  extra["image"] = a.image;
  extra["message"] = msg.to_string();
  extra["mean_abs_difference"] = diff;
  extra["outputs"] = {(dir / "iga_mask.png").string(), (dir / "sobel_mask.png").string()};
  write_manifest(dir / "manifest.json", "visualize", args, app, extra);
  out << "wrote " << (dir / "iga_mask.png").string() << " and "
      << (dir / "sobel_mask.png").string() << '\n';
  out << "mean |IGA - Sobel| (normalised maps): " << std::setprecision(6) << diff << '\n';
  return kSuccess;
}

struct Variant {
  const char* name;
  const char* slug;
  bool attention;
  bool msgcodec;
};

constexpr Variant kVariants[] = {
    {"Basic", "basic", false, false},
    {"w MC.", "w_mc", false, true},
    {"w Att.", "w_att", true, false},
    {"Both", "both", true, true},
};

int cmd_ablate(TrainArgs& a, const CLI::App* app, const std::vector<std::string>& args,
               std::ostream& out) {
  const auto base_train = resolve_train_config(a);
  const auto base_net = resolve_net_config(a);
  if (!base_train.use_attention()) throw UsageError("ablate needs an attention mask (--mask iga|sobel)");
  auto train = load_dataset(dataset_spec(a.data, Split::train, base_net.height, base_net.width, base_train.seed));
  auto val = load_dataset(dataset_spec(a.data, Split::val, base_net.height, base_net.width, base_train.seed));
  const fs::path dir = a.out;
  json manifest_extra;
  manifest_extra["data"] = data_json(a.data, train, val);
  manifest_extra["seed"] = base_train.seed;
  write_manifest(dir / "manifest.json", "ablate", args, app, manifest_extra);

  const std::vector<ChannelConfig> channels{ChannelConfig::parse("identity"),
                                            ChannelConfig::combined()};
  const std::uint64_t eval_seed = base_train.seed + 1000;
  json rows = json::array();
  std::ostringstream tsv;
  tsv << "variant\tidentity_bpa\tcombined_bpa\tidentity_psnr\n";
  for (const auto& v : kVariants) {
    auto net = base_net;
    net.use_msgcodec = v.msgcodec;
    auto cfg = base_train;
    if (!v.attention) cfg.mask = MaskSource::ones;
    out << "== " << v.name << " ==\n";
    auto state = make_train_state(net, cfg);
    auto best = train_into(state, train, val, dir / v.slug, false, out);
    auto chosen = load_checkpoint(best);
    auto report = evaluate(chosen.model, chosen.config.mask_settings(), val, channels, eval_seed,
                           cfg.batch_size);
    const auto& id = report.row("identity");
    const auto& cn = report.row("combined");
    rows.push_back({{"variant", v.name},
                    {"mask", std::string(to_string(cfg.mask))},
                    {"use_msgcodec", v.msgcodec},
                    {"identity_bpa", id.bpa_mean},
                    {"combined_bpa", cn.bpa_mean},
                    {"identity_psnr", id.psnr_mean},
                    {"checkpoint", best.string()}});
    tsv << std::setprecision(10) << v.name << '\t' << id.bpa_mean << '\t' << cn.bpa_mean << '\t'
        << id.psnr_mean << '\n';
  }
  write_text(dir / "ablation.tsv", tsv.str());
  write_text(dir / "ablation.json", json{{"seed", base_train.seed}, {"rows", rows}}.dump(2) + "\n");

  out << std::left << std::setw(8) << "Variant" << std::right << std::setw(14) << "Identity(%)"
      << std::setw(14) << "Combined(%)" << std::setw(11) << "PSNR(dB)" << '\n';
  for (const auto& r : rows) {
    out << std::left << std::setw(8) << r["variant"].get<std::string>() << std::right << std::fixed
        << std::setprecision(2) << std::setw(14) << 100.0 * r["identity_bpa"].get<double>()
        << std::setw(14) << 100.0 * r["combined_bpa"].get<double>() << std::setw(11)
        << r["identity_psnr"].get<double>() << '\n';
  }
  out.unsetf(std::ios::floatfield);
  return kSuccess;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Image data hiding with inverse gradient attention", "iga"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();
  app.set_version_flag("--version", version());

  TrainArgs train_args;
  auto* train = app.add_subcommand("train", "Train a model");
  add_train_options(train, train_args, true);

  TrainArgs ablate_args;
  ablate_args.out = "runs/ablate";
  auto* ablate = app.add_subcommand("ablate", "Train and compare Basic, w MC., w Att. and Both");
  add_train_options(ablate, ablate_args, false);

  EvalArgs eval_args;
  auto* evaluate_cmd = app.add_subcommand("evaluate", "BPA/PSNR table across distortions");
  evaluate_cmd->add_option("--config", eval_args.config, "key=value file");
  evaluate_cmd->add_option("--checkpoint", eval_args.checkpoint)->required();
  evaluate_cmd->add_option("--out", eval_args.out, "Output directory");
  add_data_options(evaluate_cmd, eval_args.data, true);
  evaluate_cmd->add_option("--split", eval_args.split)->check(CLI::IsMember({"val", "train", "all"}));
  evaluate_cmd->add_option("--noise", eval_args.noise, "Channels (repeatable); default: all seven");
  evaluate_cmd->add_option("--seed", eval_args.seed);
  evaluate_cmd->add_option("--batch-size", eval_args.batch_size);
  evaluate_cmd->add_option("--k", eval_args.k, "Expected k (checked against the checkpoint)");
  evaluate_cmd->add_option("--l", eval_args.l, "Expected l");
  evaluate_cmd->add_option("--height", eval_args.height, "Expected height");
  evaluate_cmd->add_option("--width", eval_args.width, "Expected width");

  EmbedArgs embed_args;
  auto* embed = app.add_subcommand("embed", "Hide a message in an image");
  embed->add_option("--config", embed_args.config, "key=value file");
  embed->add_option("--checkpoint", embed_args.checkpoint)->required();
  embed->add_option("--image", embed_args.image, "Cover image")->required();
  embed->add_option("--output", embed_args.output, "Encoded image (use a lossless format)")->required();
  add_message_options(embed, embed_args.message);

  ExtractArgs extract_args;
  auto* extract = app.add_subcommand("extract", "Recover the message from an image");
  extract->add_option("--config", extract_args.config, "key=value file");
  extract->add_option("--checkpoint", extract_args.checkpoint)->required();
  extract->add_option("--image", extract_args.image)->required();
  extract->add_option("--out", extract_args.out, "Directory for the run manifest");

  VisualizeArgs vis_args;
  auto* visualize = app.add_subcommand("visualize", "Write the IGA mask and the Sobel map of a cover");
  visualize->add_option("--config", vis_args.config, "key=value file");
  visualize->add_option("--checkpoint", vis_args.checkpoint)->required();
  visualize->add_option("--image", vis_args.image)->required();
  visualize->add_option("--out", vis_args.out, "Output directory");
  visualize->add_option("--seed", vis_args.seed, "Seed of the random message when none is given");
  add_message_options(visualize, vis_args.message);

  // Required options may come from the config file, so requirements are
  // checked after it is applied.
  std::vector<std::pair<CLI::App*, std::vector<CLI::Option*>>> deferred;
  for (auto* sub : app.get_subcommands([](CLI::App*) { return true; })) {
    std::vector<CLI::Option*> req;
    for (auto* o : sub->get_options()) {
      if (o->get_required()) {
        o->required(false);
        req.push_back(o);
      }
    }
    deferred.emplace_back(sub, req);
  }

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err) == 0 ? kSuccess : kUsageError;
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err) == 0 ? kSuccess : kUsageError;
  } catch (const CLI::CallForVersion& e) {
    app.exit(e, out, err);
    return kSuccess;
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kUsageError;
  }

  try {
    CLI::App* sub = app.get_subcommands().front();
    const std::string name = sub->get_name();
    std::string config_path;
    if (auto* c = sub->get_option_no_throw("--config")) config_path = c->as<std::string>();
    apply_config(sub, config_path);
    for (auto& [s, req] : deferred) {
      if (s != sub) continue;
      for (auto* o : req) {
        if (o->count() == 0) throw UsageError("missing required option " + o->get_name());
      }
    }
    if (name == "train") return cmd_train(train_args, sub, args, out);
    if (name == "ablate") return cmd_ablate(ablate_args, sub, args, out);
    if (name == "evaluate") return cmd_evaluate(eval_args, sub, args, out);
    if (name == "embed") return cmd_embed(embed_args, sub, args, out, err);
    if (name == "extract") return cmd_extract(extract_args, sub, args, out, err);
    if (name == "visualize") return cmd_visualize(vis_args, sub, args, out, err);
    throw UsageError("unknown command " + name);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kUsageError;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << '\n';
    return kUsageError;
  } catch (const TrainingDiverged& e) {
    err << "error: " << e.what() << '\n';
    return kDiverged;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kRuntimeError;
  }
}

}  // namespace iga::cli
