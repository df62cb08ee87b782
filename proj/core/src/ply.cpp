#include "pyrpoint/ply.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "pyrpoint/errors.hpp"

namespace pyrpoint {

std::array<std::uint8_t, 3> Palette::color(int label) const {
  if (label < 0 || static_cast<std::size_t>(label) >= colors.size()) return {128, 128, 128};
  return colors[static_cast<std::size_t>(label)];
}

Palette default_palette(std::size_t class_count) {
  static const std::array<std::uint8_t, 3> base[] = {
      {166, 124, 82}, {230, 25, 75}, {60, 180, 75},  {255, 225, 25}, {0, 130, 200}, {245, 130, 48},
      {145, 30, 180}, {70, 240, 240}, {240, 50, 230}, {210, 245, 60}, {250, 190, 212}, {0, 128, 128}};
  Palette p;
  for (std::size_t c = 0; c < class_count; ++c) {
    auto rgb = base[c % std::size(base)];
    if (c >= std::size(base)) {
      const auto shift = static_cast<std::uint8_t>(37 * (c / std::size(base)));
      for (auto& v : rgb) v = static_cast<std::uint8_t>(v ^ shift);
    }
    p.colors.push_back(rgb);
  }
  return p;
}

namespace {

enum class Scalar { i8, u8, i16, u16, i32, u32, f32, f64 };

std::size_t scalar_size(Scalar s) {
  switch (s) {
    case Scalar::i8:
    case Scalar::u8: return 1;
    case Scalar::i16:
    case Scalar::u16: return 2;
    case Scalar::i32:
    case Scalar::u32:
    case Scalar::f32: return 4;
    case Scalar::f64: return 8;
  }
  return 0;
}

bool parse_scalar(const std::string& t, Scalar& out) {
  static const std::pair<const char*, Scalar> names[] = {
      {"char", Scalar::i8},    {"int8", Scalar::i8},     {"uchar", Scalar::u8},   {"uint8", Scalar::u8},
      {"short", Scalar::i16},  {"int16", Scalar::i16},   {"ushort", Scalar::u16}, {"uint16", Scalar::u16},
      {"int", Scalar::i32},    {"int32", Scalar::i32},   {"uint", Scalar::u32},   {"uint32", Scalar::u32},
      {"float", Scalar::f32},  {"float32", Scalar::f32}, {"double", Scalar::f64}, {"float64", Scalar::f64}};
  for (const auto& [name, s] : names)
    if (t == name) {
      out = s;
      return true;
    }
  return false;
}

struct Property {
  std::string name;
  Scalar type = Scalar::f64;
  bool is_list = false;
  Scalar count_type = Scalar::u8;
};

struct Element {
  std::string name;
  std::size_t count = 0;
  std::vector<Property> properties;
};

/// Sequential payload decoder over the whole file buffer.
class Payload {
 public:
  Payload(const std::string& bytes, std::size_t pos, bool binary, const std::string& path)
      : bytes_(bytes), pos_(pos), binary_(binary), path_(path) {}

  double read(Scalar s) { return binary_ ? read_binary(s) : read_ascii(); }

  std::size_t position() const { return pos_; }

 private:
  double read_binary(Scalar s) {
    const std::size_t n = scalar_size(s);
    if (bytes_.size() - pos_ < n) throw ParseError(path_ + ": truncated binary payload", pos_);
    const char* p = bytes_.data() + pos_;
    pos_ += n;
    switch (s) {
      case Scalar::i8: { std::int8_t v; std::memcpy(&v, p, 1); return v; }
      case Scalar::u8: { std::uint8_t v; std::memcpy(&v, p, 1); return v; }
      case Scalar::i16: { std::int16_t v; std::memcpy(&v, p, 2); return v; }
      case Scalar::u16: { std::uint16_t v; std::memcpy(&v, p, 2); return v; }
      case Scalar::i32: { std::int32_t v; std::memcpy(&v, p, 4); return v; }
      case Scalar::u32: { std::uint32_t v; std::memcpy(&v, p, 4); return v; }
      case Scalar::f32: { float v; std::memcpy(&v, p, 4); return v; }
      case Scalar::f64: { double v; std::memcpy(&v, p, 8); return v; }
    }
    return 0.0;
  }

  double read_ascii() {
    while (pos_ < bytes_.size() && std::isspace(static_cast<unsigned char>(bytes_[pos_]))) ++pos_;
    if (pos_ >= bytes_.size()) throw ParseError(path_ + ": truncated ascii payload", pos_);
    const char* begin = bytes_.c_str() + pos_;
    char* end = nullptr;
    const double v = std::strtod(begin, &end);
    if (end == begin) throw ParseError(path_ + ": malformed number in ascii payload", pos_);
    pos_ += static_cast<std::size_t>(end - begin);
    return v;
  }

  const std::string& bytes_;
  std::size_t pos_;
  bool binary_;
  const std::string& path_;
};

void warn(std::vector<std::string>* sink, const std::string& msg) {
  if (sink) sink->push_back(msg);
  else std::cerr << "warning: " << msg << '\n';
}

}  // namespace

PointCloud read_ply(const std::string& path, std::vector<std::string>* warnings) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  const std::string bytes = buf.str();

  std::size_t pos = 0;
  auto next_line = [&](std::size_t& line_start) -> std::string {
    line_start = pos;
    const std::size_t end = bytes.find('\n', pos);
    if (end == std::string::npos) throw ParseError(path + ": header not terminated by end_header", pos);
    std::string line = bytes.substr(pos, end - pos);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    pos = end + 1;
    return line;
  };

  std::size_t at = 0;
  if (next_line(at) != "ply") throw ParseError(path + ": missing 'ply' magic", 0);
  bool binary = false, have_format = false;
  std::vector<Element> elements;
  std::set<std::string> feature_comments;
  std::optional<std::size_t> class_count;
  std::optional<int> ignore_index;
  for (;;) {
    const std::string line = next_line(at);
    std::istringstream is(line);
    std::string word;
    is >> word;
    if (word == "end_header") break;
    if (word.empty() || word == "obj_info") continue;
    if (word == "comment") {
      std::string tag, key;
      is >> tag >> key;
      if (tag == "feature" && !key.empty()) feature_comments.insert(key);
      if (tag == "class_count") class_count = std::stoul(key);
      if (tag == "ignore_index") ignore_index = std::stoi(key);
      continue;
    }
    if (word == "format") {
      std::string fmt, version;
      is >> fmt >> version;
      if (fmt == "ascii") binary = false;
      else if (fmt == "binary_little_endian") binary = true;
      else throw ParseError(path + ": unsupported format '" + fmt + "'", at);
      have_format = true;
    } else if (word == "element") {
      Element e;
      if (!(is >> e.name >> e.count)) throw ParseError(path + ": malformed element line", at);
      elements.push_back(e);
    } else if (word == "property") {
      if (elements.empty()) throw ParseError(path + ": property before any element", at);
      Property p;
      std::string type;
      is >> type;
      if (type == "list") {
        std::string count_type, item_type;
        is >> count_type >> item_type;
        p.is_list = true;
        if (!parse_scalar(count_type, p.count_type) || !parse_scalar(item_type, p.type)) {
          throw ParseError(path + ": unknown list property type", at);
        }
      } else if (!parse_scalar(type, p.type)) {
        throw ParseError(path + ": unknown property type '" + type + "'", at);
      }
      if (!(is >> p.name)) throw ParseError(path + ": property without a name", at);
      elements.back().properties.push_back(p);
    } else {
      throw ParseError(path + ": unexpected header keyword '" + word + "'", at);
    }
  }
  if (!have_format) throw ParseError(path + ": missing format line", 0);

  const Element* vertex = nullptr;
  for (const auto& e : elements)
    if (e.name == "vertex") vertex = &e;
  if (!vertex) throw ParseError(path + ": no vertex element", pos);

  // Role of every vertex property.
  enum class Role { x, y, z, feature, label, skip };
  std::vector<Role> roles;
  std::vector<std::string> feature_names;
  int axes = 0;
  bool has_label = false;
  for (const auto& p : vertex->properties) {
    Role r = Role::skip;
    if (p.is_list) {
      warn(warnings, path + ": skipping list property '" + p.name + "' on vertex");
    } else if (p.name == "x") {
      r = Role::x, axes |= 1;
    } else if (p.name == "y") {
      r = Role::y, axes |= 2;
    } else if (p.name == "z") {
      r = Role::z, axes |= 4;
    } else if (p.name == "class" || p.name == "scalar_class" || p.name == "label") {
      if (has_label) warn(warnings, path + ": second label property '" + p.name + "' ignored");
      else r = Role::label, has_label = true;
    } else if (p.name == "red" || p.name == "green" || p.name == "blue" || p.name == "intensity" ||
               feature_comments.count(p.name)) {
      r = Role::feature;
      feature_names.push_back(p.name);
    } else {
      warn(warnings, path + ": ignoring unknown vertex property '" + p.name + "'");
    }
    roles.push_back(r);
  }
  if (axes != 7) throw ParseError(path + ": vertex element lacks x/y/z", pos);

  PointCloud cloud;
  cloud.feature_names = feature_names;
  cloud.positions.resize(vertex->count);
  cloud.features.reserve(vertex->count * feature_names.size());
  if (has_label) cloud.labels.resize(vertex->count);

  Payload payload(bytes, pos, binary, path);
  for (const auto& e : elements) {
    const bool is_vertex = &e == vertex;
    for (std::size_t i = 0; i < e.count; ++i) {
      for (std::size_t k = 0; k < e.properties.size(); ++k) {
        const Property& p = e.properties[k];
        if (p.is_list) {
          const double n = payload.read(p.count_type);
          if (n < 0 || n != std::floor(n)) throw ParseError(path + ": bad list length", payload.position());
          for (std::size_t j = 0; j < static_cast<std::size_t>(n); ++j) payload.read(p.type);
          continue;
        }
        const double v = payload.read(p.type);
        if (!is_vertex) continue;
        switch (roles[k]) {
          case Role::x: cloud.positions[i][0] = v; break;
          case Role::y: cloud.positions[i][1] = v; break;
          case Role::z: cloud.positions[i][2] = v; break;
          case Role::feature: cloud.features.push_back(v); break;
          case Role::label:
            if (v != std::floor(v)) throw ParseError(path + ": non-integer label", payload.position());
            cloud.labels[i] = static_cast<int>(v);
            break;
          case Role::skip: break;
        }
      }
    }
  }

  cloud.ignore_index = ignore_index;
  if (has_label) {
    if (class_count) {
      cloud.class_count = *class_count;
    } else {
      int top = -1;
      for (int l : cloud.labels)
        if (!ignore_index || l != *ignore_index) top = std::max(top, l);
      cloud.class_count = static_cast<std::size_t>(top + 1);
    }
  }
  cloud.validate();
  return cloud;
}

void write_ply(const PointCloud& cloud, const std::string& path, PlyFormat format, const Palette* palette) {
  cloud.validate();
  const std::size_t n = cloud.size();
  const std::size_t nf = cloud.feature_count();
  std::vector<std::size_t> kept;
  for (std::size_t f = 0; f < nf; ++f) {
    const auto& name = cloud.feature_names[f];
    if (palette && (name == "red" || name == "green" || name == "blue")) continue;
    kept.push_back(f);
  }
  const bool labels = cloud.has_labels();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out << "ply\nformat " << (format == PlyFormat::ascii ? "ascii" : "binary_little_endian") << " 1.0\n";
  for (std::size_t f : kept) {
    const auto& name = cloud.feature_names[f];
    if (name != "red" && name != "green" && name != "blue" && name != "intensity") out << "comment feature " << name << '\n';
  }
  if (labels) {
    out << "comment class_count " << cloud.class_count << '\n';
    if (cloud.ignore_index) out << "comment ignore_index " << *cloud.ignore_index << '\n';
  }
  out << "element vertex " << n << '\n';
  out << "property double x\nproperty double y\nproperty double z\n";
  for (std::size_t f : kept) out << "property double " << cloud.feature_names[f] << '\n';
  if (labels) out << "property int class\n";
  if (palette) out << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
  out << "end_header\n";

  if (format == PlyFormat::ascii) {
    char num[40];
    for (std::size_t i = 0; i < n; ++i) {
      std::string row;
      auto put = [&](double v) {
        std::snprintf(num, sizeof num, "%.17g", v);
        if (!row.empty()) row += ' ';
        row += num;
      };
      for (double c : cloud.positions[i]) put(c);
      for (std::size_t f : kept) put(cloud.feature(i, f));
      if (labels) row += ' ' + std::to_string(cloud.labels[i]);
      if (palette) {
        const auto rgb = palette->color(labels ? cloud.labels[i] : -1);
        for (auto c : rgb) row += ' ' + std::to_string(c);
      }
      out << row << '\n';
    }
  } else {
    std::string record;
    for (std::size_t i = 0; i < n; ++i) {
      record.clear();
      auto put = [&](const void* p, std::size_t bytes) { record.append(static_cast<const char*>(p), bytes); };
      for (double c : cloud.positions[i]) put(&c, 8);
      for (std::size_t f : kept) {
        const double v = cloud.feature(i, f);
        put(&v, 8);
      }
      if (labels) {
        const std::int32_t l = cloud.labels[i];
        put(&l, 4);
      }
      if (palette) {
        const auto rgb = palette->color(labels ? cloud.labels[i] : -1);
        put(rgb.data(), 3);
      }
      out.write(record.data(), static_cast<std::streamsize>(record.size()));
    }
  }
  if (!out) throw IoError("write failed: " + path);
}

}  // namespace pyrpoint
