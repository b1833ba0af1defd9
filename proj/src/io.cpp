#include "semmap/io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cctype>
#include <cstring>
#include <limits>
#include <sstream>

namespace semmap {
namespace {

template <typename T>
T byteswap_if_big(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    std::reverse(b, b + sizeof(T));
    std::memcpy(&v, b, sizeof(T));
  }
  return v;
}

template <typename T>
void put(std::ostream& out, T v) {
  v = byteswap_if_big(v);
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in, const fs::path& path) {
  T v;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) throw InputError(path.string() + ": unexpected end of file");
  return byteswap_if_big(v);
}

std::ifstream open_in(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError(path.string() + ": cannot open for reading");
  return in;
}

std::ofstream open_out(const fs::path& path, std::ios::openmode extra = {}) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | extra);
  if (!out) throw InputError(path.string() + ": cannot open for writing");
  return out;
}

void check_magic(std::istream& in, const fs::path& path, const char* expected) {
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, expected, 4) != 0)
    throw InputError(path.string() + ": expected magic " + std::string(expected, 4));
}

void finish(std::ofstream& out, const fs::path& path) {
  out.flush();
  if (!out) throw InputError(path.string() + ": write failed");
}

// Skips whitespace and '#' comments in a netpbm header.
std::string pnm_token(std::istream& in, const fs::path& path) {
  std::string tok;
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (std::isspace(c)) {
      if (!tok.empty()) return tok;
      continue;
    }
    tok.push_back(static_cast<char>(c));
  }
  if (tok.empty()) throw InputError(path.string() + ": truncated image header");
  return tok;
}

int pnm_int(std::istream& in, const fs::path& path) {
  const std::string tok = pnm_token(in, path);
  try {
    std::size_t used = 0;
    const int v = std::stoi(tok, &used);
    if (used != tok.size() || v <= 0) throw std::invalid_argument(tok);
    return v;
  } catch (const std::exception&) {
    throw InputError(path.string() + ": bad image header value '" + tok + "'");
  }
}

std::vector<std::string> data_lines(const std::string& text) {
  std::vector<std::string> lines;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    lines.push_back(line);
  }
  return lines;
}

}  // namespace

LabelDistribution UnaryMap::distribution(std::size_t pixel) const {
  std::vector<double> p(labels);
  for (int l = 0; l < labels; ++l) p[l] = prob(pixel, l);
  return normalize(p);
}

Eigen::MatrixXd UnaryMap::costs() const {
  Eigen::MatrixXd c(static_cast<Eigen::Index>(pixel_count()), labels);
  for (std::size_t p = 0; p < pixel_count(); ++p)
    for (int l = 0; l < labels; ++l)
      c(static_cast<Eigen::Index>(p), l) = -std::log(std::max(static_cast<double>(prob(p, l)), kProbabilityFloor));
  return c;
}

LabelImage UnaryMap::argmax() const {
  LabelImage out(width, height, 0);
  for (std::size_t p = 0; p < pixel_count(); ++p) {
    int best = 0;
    for (int l = 1; l < labels; ++l)
      if (prob(p, l) > prob(p, best)) best = l;
    out[p] = static_cast<std::uint8_t>(best);
  }
  return out;
}

UnaryMap read_unary(const fs::path& path) {
  std::ifstream in = open_in(path);
  check_magic(in, path, "UNRY");
  UnaryMap map;
  map.width = static_cast<int>(get<std::uint32_t>(in, path));
  map.height = static_cast<int>(get<std::uint32_t>(in, path));
  map.labels = static_cast<int>(get<std::uint32_t>(in, path));
  if (map.width <= 0 || map.height <= 0 || map.labels <= 0 || map.labels >= kUnlabeled)
    throw InputError(path.string() + ": invalid unary map dimensions");
  map.probs.resize(map.pixel_count() * map.labels);
  for (float& p : map.probs) p = get<float>(in, path);
  for (std::size_t px = 0; px < map.pixel_count(); ++px) {
    double sum = 0.0;
    for (int l = 0; l < map.labels; ++l) {
      const float p = map.prob(px, l);
      if (!std::isfinite(p) || p < 0.0f) throw InputError(path.string() + ": negative or non-finite probability");
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-3)
      throw InputError(path.string() + ": probabilities of pixel " + std::to_string(px) + " sum to " +
                       std::to_string(sum));
  }
  return map;
}

void write_unary(const fs::path& path, const UnaryMap& map) {
  std::ofstream out = open_out(path);
  out.write("UNRY", 4);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(map.width));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(map.height));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(map.labels));
  for (float p : map.probs) put<float>(out, p);
  finish(out, path);
}

namespace {
DepthImage read_float_image(std::istream& in, const fs::path& path) {
  const auto w = static_cast<int>(get<std::uint32_t>(in, path));
  const auto h = static_cast<int>(get<std::uint32_t>(in, path));
  if (w <= 0 || h <= 0) throw InputError(path.string() + ": invalid image dimensions");
  DepthImage img(w, h);
  for (float& v : img.data()) v = get<float>(in, path);
  return img;
}

void write_float_image(const fs::path& path, const char* magic, const DepthImage& img) {
  std::ofstream out = open_out(path);
  out.write(magic, 4);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(img.width()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(img.height()));
  for (float v : img.data()) put<float>(out, v);
  finish(out, path);
}
}  // namespace

DepthImage read_depth(const fs::path& path, const CameraIntrinsics& intrinsics) {
  std::ifstream in = open_in(path);
  char magic[4];
  if (!in.read(magic, 4)) throw InputError(path.string() + ": missing depth magic");
  if (std::memcmp(magic, "DPTH", 4) == 0) return read_float_image(in, path);
  if (std::memcmp(magic, "DISP", 4) != 0) throw InputError(path.string() + ": expected DPTH or DISP magic");
  DepthImage img = read_float_image(in, path);
  if (!(intrinsics.fx > 0.0) || !(intrinsics.baseline > 0.0))
    throw InputError(path.string() + ": disparity input needs fx and baseline");
  for (float& v : img.data())
    v = (std::isfinite(v) && v > 0.0f) ? static_cast<float>(intrinsics.disparity_to_depth(v))
                                       : std::numeric_limits<float>::quiet_NaN();
  return img;
}

void write_depth(const fs::path& path, const DepthImage& depth) { write_float_image(path, "DPTH", depth); }
void write_disparity(const fs::path& path, const DepthImage& disparity) { write_float_image(path, "DISP", disparity); }

std::vector<Pose> read_poses(const fs::path& path) {
  std::vector<Pose> poses;
  std::size_t line_no = 0;
  for (const std::string& line : data_lines(read_text(path))) {
    ++line_no;
    std::istringstream ls(line);
    double v[12];
    for (double& x : v)
      if (!(ls >> x)) throw InputError(path.string() + ": pose line " + std::to_string(line_no) + " needs 12 numbers");
    std::string extra;
    if (ls >> extra) throw InputError(path.string() + ": pose line " + std::to_string(line_no) + " has extra values");
    Pose p;
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) p.rotation(r, c) = v[r * 4 + c];
      p.translation[r] = v[r * 4 + 3];
    }
    try {
      p.validate();
    } catch (const PoseError& e) {
      throw InputError(path.string() + ": pose line " + std::to_string(line_no) + ": " + e.what());
    }
    poses.push_back(p);
  }
  return poses;
}

void write_poses(const fs::path& path, const std::vector<Pose>& poses) {
  std::ostringstream out;
  out.precision(17);
  for (const Pose& p : poses) {
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) out << p.rotation(r, c) << ' ';
      out << p.translation[r] << (r < 2 ? ' ' : '\n');
    }
  }
  write_text(path, out.str());
}

CameraIntrinsics read_calibration(const fs::path& path) {
  std::istringstream in(read_text(path));
  CameraIntrinsics k;
  if (!(in >> k.fx >> k.fy >> k.cx >> k.cy >> k.baseline))
    throw InputError(path.string() + ": calibration needs 'fx fy cx cy baseline'");
  if (!(k.fx > 0.0) || !(k.fy > 0.0) || !(k.baseline > 0.0))
    throw InputError(path.string() + ": focal lengths and baseline must be positive");
  return k;
}

void write_calibration(const fs::path& path, const CameraIntrinsics& k) {
  std::ostringstream out;
  out.precision(17);
  out << k.fx << ' ' << k.fy << ' ' << k.cx << ' ' << k.cy << ' ' << k.baseline << '\n';
  write_text(path, out.str());
}

std::optional<int> LabelTable::sky_id() const {
  for (const LabelEntry& e : entries)
    if (e.is_sky) return e.id;
  return std::nullopt;
}

std::vector<std::string> LabelTable::names() const {
  std::vector<std::string> out;
  for (const LabelEntry& e : entries) out.push_back(e.name);
  return out;
}

std::array<std::uint8_t, 3> LabelTable::color(int id) const {
  if (id < 0 || id >= size()) return {0, 0, 0};
  return entries[id].rgb;
}

LabelTable read_palette(const fs::path& path) {
  LabelTable table;
  for (const std::string& line : data_lines(read_text(path))) {
    std::istringstream ls(line);
    LabelEntry e;
    int r, g, b, sky;
    if (!(ls >> e.id >> e.name >> r >> g >> b >> sky))
      throw InputError(path.string() + ": palette line needs 'id name r g b is_sky': " + line);
    if (r < 0 || r > 255 || g < 0 || g > 255 || b < 0 || b > 255)
      throw InputError(path.string() + ": palette color out of range: " + line);
    e.rgb = {static_cast<std::uint8_t>(r), static_cast<std::uint8_t>(g), static_cast<std::uint8_t>(b)};
    e.is_sky = sky != 0;
    table.entries.push_back(e);
  }
  std::sort(table.entries.begin(), table.entries.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  for (int i = 0; i < table.size(); ++i)
    if (table.entries[i].id != i) throw InputError(path.string() + ": palette ids must be 0..n-1 without gaps");
  if (table.size() == 0 || table.size() >= kUnlabeled) throw InputError(path.string() + ": palette must have 1..254 labels");
  if (std::count_if(table.entries.begin(), table.entries.end(), [](const auto& e) { return e.is_sky; }) > 1)
    throw InputError(path.string() + ": at most one sky label");
  return table;
}

void write_palette(const fs::path& path, const LabelTable& table) {
  std::ostringstream out;
  out << "# id name r g b is_sky\n";
  for (const LabelEntry& e : table.entries)
    out << e.id << ' ' << e.name << ' ' << int(e.rgb[0]) << ' ' << int(e.rgb[1]) << ' ' << int(e.rgb[2]) << ' '
        << (e.is_sky ? 1 : 0) << '\n';
  write_text(path, out.str());
}

RgbImage read_ppm(const fs::path& path) {
  std::ifstream in = open_in(path);
  if (pnm_token(in, path) != "P6") throw InputError(path.string() + ": not a binary PPM (P6)");
  const int w = pnm_int(in, path), h = pnm_int(in, path), maxval = pnm_int(in, path);
  if (maxval != 255) throw InputError(path.string() + ": only 8-bit PPM is supported");
  RgbImage img(w, h);
  if (!in.read(reinterpret_cast<char*>(img.data().data()), static_cast<std::streamsize>(img.data().size())))
    throw InputError(path.string() + ": truncated pixel data");
  return img;
}

void write_ppm(const fs::path& path, const RgbImage& image) {
  std::ofstream out = open_out(path);
  out << "P6\n" << image.width() << ' ' << image.height() << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.data().data()), static_cast<std::streamsize>(image.data().size()));
  finish(out, path);
}

MaskImage read_pgm(const fs::path& path) {
  std::ifstream in = open_in(path);
  if (pnm_token(in, path) != "P5") throw InputError(path.string() + ": not a binary PGM (P5)");
  const int w = pnm_int(in, path), h = pnm_int(in, path), maxval = pnm_int(in, path);
  if (maxval != 255) throw InputError(path.string() + ": only 8-bit PGM is supported");
  MaskImage img(w, h);
  if (!in.read(reinterpret_cast<char*>(img.data().data()), static_cast<std::streamsize>(img.data().size())))
    throw InputError(path.string() + ": truncated pixel data");
  return img;
}

void write_pgm(const fs::path& path, const MaskImage& image) {
  std::ofstream out = open_out(path);
  out << "P5\n" << image.width() << ' ' << image.height() << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.data().data()), static_cast<std::streamsize>(image.data().size()));
  finish(out, path);
}

void write_pgm16(const fs::path& path, const std::vector<std::uint16_t>& values, int width, int height) {
  std::ofstream out = open_out(path);
  out << "P5\n" << width << ' ' << height << "\n65535\n";
  for (std::uint16_t v : values) {
    const char bytes[2] = {static_cast<char>(v >> 8), static_cast<char>(v & 0xff)};
    out.write(bytes, 2);
  }
  finish(out, path);
}

void write_superpixels(const fs::path& path, const SuperpixelMap& sp) {
  std::vector<std::uint16_t> v(sp.labels.size());
  std::transform(sp.labels.begin(), sp.labels.end(), v.begin(),
                 [](std::int32_t l) { return static_cast<std::uint16_t>(std::min<std::int32_t>(l, 65535)); });
  write_pgm16(path, v, sp.width, sp.height);
}

RgbImage colorize(const LabelImage& labels, const LabelTable& table) {
  RgbImage out(labels.width(), labels.height());
  for (std::size_t p = 0; p < labels.pixel_count(); ++p) {
    const auto c = labels[p] == kUnlabeled ? std::array<std::uint8_t, 3>{128, 128, 128} : table.color(labels[p]);
    for (int ch = 0; ch < 3; ++ch) out[3 * p + ch] = c[ch];
  }
  return out;
}

std::size_t archive_record_size(int label_count) {
  return 3 * sizeof(std::int32_t) + sizeof(float) + 3 * sizeof(float) + sizeof(std::uint32_t) +
         static_cast<std::size_t>(label_count) * sizeof(float);
}

ArchiveWriter::ArchiveWriter(const fs::path& path, int label_count, bool truncate)
    : path_(path), label_count_(label_count) {
  out_ = open_out(path, truncate ? std::ios::trunc : std::ios::app);
}

bool ArchiveWriter::write(const Eigen::Vector3i& global, const GridCell& cell) {
  if (cell.color_count == 0 && !cell.label_dist) return false;
  if (cell.label_dist && static_cast<int>(cell.label_dist->size()) != label_count_)
    throw InputError(path_.string() + ": archived cell has the wrong label count");
  for (int k = 0; k < 3; ++k) put<std::int32_t>(out_, global[k]);
  put<float>(out_, cell.log_odds);
  for (float c : cell.color_sum) put<float>(out_, c);
  put<std::uint32_t>(out_, cell.color_count);
  for (int l = 0; l < label_count_; ++l)
    put<float>(out_, cell.label_dist ? static_cast<float>((*cell.label_dist)[l]) : 0.0f);
  if (!out_) throw InputError(path_.string() + ": archive write failed");
  ++written_;
  return true;
}

void ArchiveWriter::flush() { finish(out_, path_); }

std::vector<ArchiveRecord> read_archive(const fs::path& path, int label_count) {
  std::vector<ArchiveRecord> out;
  if (!fs::exists(path)) return out;
  const std::size_t bytes = fs::file_size(path);
  const std::size_t rec = archive_record_size(label_count);
  if (bytes % rec != 0) throw InputError(path.string() + ": archive size is not a whole number of records");
  std::ifstream in = open_in(path);
  out.reserve(bytes / rec);
  std::vector<double> dist(label_count);
  for (std::size_t r = 0; r < bytes / rec; ++r) {
    ArchiveRecord a;
    for (int k = 0; k < 3; ++k) a.global[k] = get<std::int32_t>(in, path);
    a.cell.log_odds = get<float>(in, path);
    for (float& c : a.cell.color_sum) c = get<float>(in, path);
    a.cell.color_count = get<std::uint32_t>(in, path);
    double sum = 0.0;
    for (double& p : dist) sum += (p = get<float>(in, path));
    if (sum > 0.0) a.cell.label_dist = normalize(dist);
    out.push_back(std::move(a));
  }
  return out;
}

void write_snapshot(const fs::path& path, const MapSnapshot& s) {
  std::ofstream out = open_out(path, std::ios::trunc);
  out.write("SMSN", 4);
  put<std::uint32_t>(out, 1);
  for (int d : s.config.dims) put<std::int32_t>(out, d);
  put<double>(out, s.config.resolution);
  put<double>(out, s.config.occupied_threshold);
  put<double>(out, s.config.log_odds_hit);
  put<double>(out, s.config.log_odds_miss);
  put<double>(out, s.config.log_odds_min);
  put<double>(out, s.config.log_odds_max);
  for (int k = 0; k < 3; ++k) put<double>(out, s.config.anchor[k]);
  put<double>(out, s.config.max_range);
  put<std::uint8_t>(out, s.config.dedup_hits ? 1 : 0);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.label_count));
  for (int k = 0; k < 3; ++k) put<std::int32_t>(out, s.origin_cell[k]);
  put<std::int64_t>(out, s.next_frame);
  put<std::uint64_t>(out, s.archive_records);
  put<std::uint64_t>(out, s.cells.size());
  for (const GridCell& c : s.cells) {
    put<float>(out, c.log_odds);
    for (float v : c.color_sum) put<float>(out, v);
    put<std::uint32_t>(out, c.color_count);
    put<std::int32_t>(out, c.last_update);
    put<std::uint8_t>(out, c.label_dist ? 1 : 0);
    if (c.label_dist)
      for (double p : c.label_dist->probs()) put<double>(out, p);
  }
  finish(out, path);
}

MapSnapshot read_snapshot(const fs::path& path) {
  std::ifstream in = open_in(path);
  check_magic(in, path, "SMSN");
  if (get<std::uint32_t>(in, path) != 1) throw InputError(path.string() + ": unsupported snapshot version");
  MapSnapshot s;
  for (int& d : s.config.dims) d = get<std::int32_t>(in, path);
  s.config.resolution = get<double>(in, path);
  s.config.occupied_threshold = get<double>(in, path);
  s.config.log_odds_hit = get<double>(in, path);
  s.config.log_odds_miss = get<double>(in, path);
  s.config.log_odds_min = get<double>(in, path);
  s.config.log_odds_max = get<double>(in, path);
  for (int k = 0; k < 3; ++k) s.config.anchor[k] = get<double>(in, path);
  s.config.max_range = get<double>(in, path);
  s.config.dedup_hits = get<std::uint8_t>(in, path) != 0;
  try {
    s.config.validate();
  } catch (const Error& e) {
    throw InputError(path.string() + ": " + e.what());
  }
  s.label_count = static_cast<int>(get<std::uint32_t>(in, path));
  for (int k = 0; k < 3; ++k) s.origin_cell[k] = get<std::int32_t>(in, path);
  s.next_frame = get<std::int64_t>(in, path);
  s.archive_records = get<std::uint64_t>(in, path);
  const auto count = get<std::uint64_t>(in, path);
  if (count != s.config.cell_count()) throw InputError(path.string() + ": cell count does not match the grid dims");
  s.cells.resize(count);
  std::vector<double> dist(s.label_count);
  for (GridCell& c : s.cells) {
    c.log_odds = get<float>(in, path);
    for (float& v : c.color_sum) v = get<float>(in, path);
    c.color_count = get<std::uint32_t>(in, path);
    c.last_update = get<std::int32_t>(in, path);
    if (get<std::uint8_t>(in, path)) {
      for (double& p : dist) p = get<double>(in, path);
      c.label_dist = normalize(dist);
    }
  }
  return s;
}

void write_ply(const fs::path& path, const std::vector<PlyVertex>& vertices) {
  std::ofstream out = open_out(path, std::ios::trunc);
  out << "ply\nformat binary_little_endian 1.0\nelement vertex " << vertices.size()
      << "\nproperty float x\nproperty float y\nproperty float z\n"
         "property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n";
  for (const PlyVertex& v : vertices) {
    put<float>(out, v.x);
    put<float>(out, v.y);
    put<float>(out, v.z);
    put<std::uint8_t>(out, v.r);
    put<std::uint8_t>(out, v.g);
    put<std::uint8_t>(out, v.b);
  }
  finish(out, path);
}

std::vector<PlyVertex> read_ply(const fs::path& path) {
  std::ifstream in = open_in(path);
  std::string line;
  std::size_t count = 0;
  bool binary = false;
  while (std::getline(in, line)) {
    if (line.rfind("format binary_little_endian", 0) == 0) binary = true;
    if (line.rfind("element vertex ", 0) == 0) count = std::stoull(line.substr(15));
    if (line == "end_header") break;
  }
  if (!binary || line != "end_header") throw InputError(path.string() + ": not a binary little-endian PLY");
  std::vector<PlyVertex> out(count);
  for (PlyVertex& v : out) {
    v.x = get<float>(in, path);
    v.y = get<float>(in, path);
    v.z = get<float>(in, path);
    v.r = get<std::uint8_t>(in, path);
    v.g = get<std::uint8_t>(in, path);
    v.b = get<std::uint8_t>(in, path);
  }
  return out;
}

std::string read_text(const fs::path& path) {
  std::ifstream in = open_in(path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out = open_out(path, std::ios::trunc);
  out << text;
  finish(out, path);
}

}  // namespace semmap
