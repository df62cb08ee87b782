#include "pyrpoint/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "pyrpoint/errors.hpp"

namespace pyrpoint {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr const char* kMagic = "PYRPOINT-CHECKPOINT 1";

void write_doubles(std::ostream& out, std::span<const double> values) {
  out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(double)));
}

class Reader {
 public:
  Reader(std::string bytes, std::string path) : bytes_(std::move(bytes)), path_(std::move(path)) {}

  std::string line() {
    const std::size_t end = bytes_.find('\n', pos_);
    if (end == std::string::npos) fail("unexpected end of file");
    std::string out = bytes_.substr(pos_, end - pos_);
    pos_ = end + 1;
    return out;
  }

  std::string take(std::size_t n) {
    if (bytes_.size() - pos_ < n) fail("truncated payload (need " + std::to_string(n) + " bytes)");
    std::string out = bytes_.substr(pos_, n);
    pos_ += n;
    return out;
  }

  void doubles(std::vector<double>& out, std::size_t n) {
    const std::string raw = take(n * sizeof(double));
    out.resize(n);
    std::memcpy(out.data(), raw.data(), raw.size());
  }

  void expect_newline() {
    if (take(1) != "\n") fail("expected newline");
  }

  std::size_t section(const std::string& name) {
    const std::size_t at = pos_;
    std::istringstream is(line());
    std::string tag;
    std::size_t count = 0;
    if (!(is >> tag >> count) || tag != name) {
      pos_ = at;
      fail("expected '" + name + " <count>'");
    }
    return count;
  }

  [[noreturn]] void fail(const std::string& what) const { throw ParseError(path_ + ": " + what, pos_); }

 private:
  std::string bytes_;
  std::string path_;
  std::size_t pos_ = 0;
};

struct StoredTensor {
  std::string name;
  ad::Shape shape;
  bool trainable = true;
  std::vector<double> values;
  std::vector<double> momentum;
};

struct StoredCheckpoint {
  json config;
  std::vector<StoredTensor> tensors;
  TrainState state;
};

StoredCheckpoint read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  Reader r(buf.str(), path);

  StoredCheckpoint ck;
  if (r.line() != kMagic) r.fail("not a pyrpoint checkpoint");
  const std::size_t config_bytes = r.section("config");
  try {
    ck.config = json::parse(r.take(config_bytes));
  } catch (const json::parse_error& e) {
    r.fail(std::string("config: ") + e.what());
  }
  r.expect_newline();

  const std::size_t count = r.section("parameters");
  for (std::size_t i = 0; i < count; ++i) {
    StoredTensor t;
    std::istringstream is(r.line());
    std::size_t rank = 0;
    int trainable = 0, has_momentum = 0;
    if (!(is >> t.name >> rank)) r.fail("bad parameter header");
    t.shape.resize(rank);
    for (auto& d : t.shape)
      if (!(is >> d)) r.fail("bad shape for " + t.name);
    if (!(is >> trainable >> has_momentum)) r.fail("bad flags for " + t.name);
    t.trainable = trainable != 0;
    const std::size_t n = ad::numel(t.shape);
    r.doubles(t.values, n);
    if (has_momentum) r.doubles(t.momentum, n);
    r.expect_newline();
    ck.tensors.push_back(std::move(t));
  }

  const std::size_t state_bytes = r.section("state");
  try {
    ck.state = TrainState::from_json(json::parse(r.take(state_bytes)));
  } catch (const json::exception& e) {
    r.fail(std::string("state: ") + e.what());
  }
  return ck;
}

void restore(const StoredCheckpoint& ck, ParameterStore& store, const std::string& path) {
  if (ck.tensors.size() != store.size()) {
    throw ConfigError(path + ": checkpoint holds " + std::to_string(ck.tensors.size()) +
                      " parameters but the network registers " + std::to_string(store.size()));
  }
  for (std::size_t i = 0; i < store.size(); ++i) {
    const StoredTensor& t = ck.tensors[i];
    Parameter& p = store[i];
    if (t.name != p.name) {
      throw ConfigError(path + ": parameter " + std::to_string(i) + " is '" + t.name + "', expected '" + p.name + "'");
    }
    if (t.shape != p.value.shape()) {
      throw ConfigError(path + ": parameter '" + t.name + "' has shape " + ad::shape_string(t.shape) + ", expected " +
                        ad::shape_string(p.value.shape()));
    }
  }
  for (std::size_t i = 0; i < store.size(); ++i) {
    const StoredTensor& t = ck.tensors[i];
    Parameter& p = store[i];
    auto dst = p.value.mutable_data();
    std::copy(t.values.begin(), t.values.end(), dst.begin());
    p.momentum = t.momentum;
  }
}

}  // namespace

json TrainState::to_json() const {
  return {{"step", step},
          {"epoch", epoch},
          {"learning_rate", learning_rate},
          {"best_val_miou", best_val_miou},
          {"seed", seed},
          {"loss_history", loss_history},
          {"metric_history", metric_history}};
}

TrainState TrainState::from_json(const json& doc) {
  reject_unknown_keys(doc, {"step", "epoch", "learning_rate", "best_val_miou", "seed", "loss_history", "metric_history"},
                      "train state");
  TrainState s;
  s.step = doc.at("step").get<std::size_t>();
  s.epoch = doc.at("epoch").get<std::size_t>();
  s.learning_rate = doc.at("learning_rate").get<double>();
  s.best_val_miou = doc.at("best_val_miou").get<double>();
  s.seed = doc.at("seed").get<std::uint64_t>();
  s.loss_history = doc.at("loss_history").get<std::vector<double>>();
  s.metric_history = doc.at("metric_history");
  return s;
}

void save_checkpoint(const std::string& path, const PyramidNetwork& net, const TrainState& state) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + tmp);
    out << kMagic << '\n';
    const std::string config = net.config().to_json().dump();
    out << "config " << config.size() << '\n' << config << '\n';
    const ParameterStore& store = net.parameters();
    out << "parameters " << store.size() << '\n';
    for (const auto& entry : store) {
      const Parameter& p = *entry;
      out << p.name << ' ' << p.value.rank();
      for (std::size_t d : p.value.shape()) out << ' ' << d;
      const bool has_momentum = p.momentum.size() == p.value.numel() && !p.momentum.empty();
      out << ' ' << (p.trainable ? 1 : 0) << ' ' << (has_momentum ? 1 : 0) << '\n';
      write_doubles(out, p.value.data());
      if (has_momentum) write_doubles(out, p.momentum);
      out << '\n';
    }
    const std::string st = state.to_json().dump();
    out << "state " << st.size() << '\n' << st << '\n';
    if (!out) throw IoError("write failed: " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place at " + path + ": " + ec.message());
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  StoredCheckpoint ck = read_file(path);
  PyramidNetwork net(NetworkConfig::from_json(ck.config));
  restore(ck, net.parameters(), path);
  return {std::move(net), std::move(ck.state)};
}

TrainState load_checkpoint_into(const std::string& path, PyramidNetwork& net) {
  StoredCheckpoint ck = read_file(path);
  restore(ck, net.parameters(), path);
  return std::move(ck.state);
}

}  // namespace pyrpoint
