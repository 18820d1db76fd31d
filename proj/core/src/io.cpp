#include "sfn/io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

namespace sfn {

namespace fs = std::filesystem;

namespace {

constexpr std::array<char, 4> kMagic{'S', 'F', 'N', '1'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(const std::string& in, std::size_t pos) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  return v;
}

std::string encode_block(std::size_t rows, std::size_t cols, std::span<const double> values) {
  std::string out(kMagic.begin(), kMagic.end());
  put_u32(out, static_cast<std::uint32_t>(rows));
  put_u32(out, static_cast<std::uint32_t>(cols));
  for (double v : values) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  return out;
}

std::pair<std::size_t, std::size_t> block_dims(const Tensor& t) {
  if (t.rank() == 0) return {1, 1};
  if (t.rank() == 1) return {1, t.dim(0)};
  return {t.dim(0), t.numel() / std::max<std::size_t>(1, t.dim(0))};
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(line);
  while (std::getline(is, cur, sep)) out.push_back(cur);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

std::string strip_cr(std::string s) {
  if (!s.empty() && s.back() == '\r') s.pop_back();
  return s;
}

}  // namespace

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path.string());
  os << text;
  if (!os) throw DataError("write failed for " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void write_feature_file(const fs::path& path, const Tensor& values) {
  const auto [rows, cols] = block_dims(values);
  write_text(path, encode_block(rows, cols, values.data()));
}

Tensor read_feature_file(const fs::path& path) {
  const std::string bytes = read_text(path);
  if (bytes.size() < 12 || !std::equal(kMagic.begin(), kMagic.end(), bytes.begin())) {
    throw DataError(path.string() + ": not an SFN1 feature file");
  }
  const std::size_t rows = get_u32(bytes, 4), cols = get_u32(bytes, 8);
  if (bytes.size() != 12 + 4 * rows * cols) {
    throw DataError(path.string() + ": expected " + std::to_string(rows) + "x" + std::to_string(cols) +
                    " floats, file has " + std::to_string(bytes.size()) + " bytes");
  }
  std::vector<double> values(rows * cols);
  for (std::size_t i = 0; i < values.size(); ++i) values[i] = std::bit_cast<float>(get_u32(bytes, 12 + 4 * i));
  return Tensor(Shape{rows, cols}, std::move(values));
}

void write_index(const fs::path& path, const std::vector<VideoRecord>& records) {
  std::ostringstream os;
  os << "video_id,user_id,supertrial_id,task,raw_label,rgb_path,flow_path,mask_path\n";
  os << std::setprecision(17);
  for (const auto& r : records) {
    os << r.video_id << ',' << r.user_id.value_or("") << ',' << r.supertrial_id.value_or("") << ',' << r.task << ','
       << r.raw_label;
    for (const auto& p : r.feature_paths) os << ',' << p;
    os << '\n';
  }
  write_text(path, os.str());
}

std::vector<VideoRecord> read_index(const fs::path& path) {
  std::istringstream is(read_text(path));
  std::string line;
  if (!std::getline(is, line)) throw DataError(path.string() + ": empty index");
  const auto header = split(strip_cr(line), ',');
  const std::vector<std::string> expected{"video_id", "user_id",  "supertrial_id", "task",
                                          "raw_label", "rgb_path", "flow_path",     "mask_path"};
  if (header != expected) throw DataError(path.string() + ": unexpected index header '" + line + "'");
  std::vector<VideoRecord> out;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    line = strip_cr(line);
    if (line.empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != expected.size()) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected 8 columns, got " +
                      std::to_string(f.size()));
    }
    VideoRecord r;
    r.video_id = f[0];
    if (!f[1].empty()) r.user_id = f[1];
    if (!f[2].empty()) r.supertrial_id = f[2];
    r.task = f[3];
    try {
      std::size_t pos = 0;
      r.raw_label = std::stod(f[4], &pos);
      if (pos != f[4].size()) throw std::invalid_argument("trailing characters");
    } catch (const std::exception&) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": bad raw_label '" + f[4] + "'");
    }
    for (std::size_t m = 0; m < 3; ++m) r.feature_paths[m] = f[5 + m];
    out.push_back(std::move(r));
  }
  return out;
}

void save_dataset(const fs::path& dir, const Dataset& data) {
  fs::create_directories(dir);
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (std::size_t m = 0; m < 3; ++m) write_feature_file(dir / data.records[i].feature_paths[m], data.features[i][m].values);
  }
  write_index(dir / "index.csv", data.records);
}

Dataset load_dataset(const fs::path& index_path) {
  Dataset data;
  data.records = read_index(index_path);
  const fs::path base = index_path.parent_path();
  for (const auto& r : data.records) {
    std::array<FeatureSequence, 3> f;
    for (auto mod : kModalities) {
      const auto m = static_cast<std::size_t>(mod);
      fs::path p = r.feature_paths[m];
      if (p.is_relative()) p = base / p;
      f[m] = FeatureSequence{r.video_id, mod, read_feature_file(p)};
    }
    data.features.push_back(std::move(f));
  }
  return data;
}

namespace {

std::string manifest_shape(const Shape& shape) {
  std::string out;
  for (std::size_t i = 0; i < shape.size(); ++i) out += (i ? "x" : "") + std::to_string(shape[i]);
  return out.empty() ? "scalar" : out;
}

}  // namespace

void save_checkpoint(const fs::path& dir, const ParamList& params) {
  fs::create_directories(dir);
  std::ostringstream manifest;
  manifest << "name\tshape\tfile\n";
  for (const auto& p : params) {
    const std::string file = p.name + ".sfn";
    write_feature_file(dir / file, p.tensor);
    manifest << p.name << '\t' << manifest_shape(p.tensor.shape()) << '\t' << file << '\n';
  }
  write_text(dir / "manifest.tsv", manifest.str());
}

void load_checkpoint(const fs::path& dir, const ParamList& params) {
  std::istringstream is(read_text(dir / "manifest.tsv"));
  std::string line;
  std::getline(is, line);
  std::map<std::string, std::pair<std::string, std::string>> entries;
  while (std::getline(is, line)) {
    const auto f = split(strip_cr(line), '\t');
    if (f.size() != 3) continue;
    entries[f[0]] = {f[1], f[2]};
  }
  for (const auto& p : params) {
    const auto it = entries.find(p.name);
    if (it == entries.end()) throw DataError("checkpoint " + dir.string() + " has no tensor '" + p.name + "'");
    const Tensor stored = read_feature_file(dir / it->second.second);
    if (it->second.first != manifest_shape(p.tensor.shape()) || stored.numel() != p.tensor.numel()) {
      throw DataError("checkpoint tensor '" + p.name + "' has shape " + it->second.first + ", model expects " +
                      manifest_shape(p.tensor.shape()));
    }
    Tensor target = p.tensor;
    std::copy(stored.data().begin(), stored.data().end(), target.data().begin());
  }
}

void write_trace_csv(const fs::path& path, const Tensor& modality_mass) {
  std::ostringstream os;
  os << "window,rgb,flow,mask\n" << std::setprecision(10);
  for (std::size_t t = 0; t < modality_mass.dim(0); ++t) {
    os << t;
    for (std::size_t m = 0; m < 3; ++m) os << ',' << modality_mass.at(t, m);
    os << '\n';
  }
  write_text(path, os.str());
}

std::string epoch_log_jsonl(const std::vector<EpochRecord>& log) {
  std::ostringstream os;
  for (const auto& r : log) {
    nlohmann::json j{{"phase", r.phase}, {"branch", r.branch}, {"epoch", r.epoch}, {"lr", r.lr}, {"mean_loss", r.mean_loss}};
    os << j.dump() << '\n';
  }
  return os.str();
}

std::string sha256_hex(const std::string& bytes) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md.data(), &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("sha256 failed");
  }
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  return os.str();
}

std::string file_sha256(const fs::path& path) { return sha256_hex(read_text(path)); }

std::string directory_sha256(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) files.push_back(fs::relative(e.path(), dir));
  std::sort(files.begin(), files.end());
  std::string acc;
  for (const auto& f : files) acc += f.generic_string() + '\n' + file_sha256(dir / f) + '\n';
  return sha256_hex(acc);
}

}  // namespace sfn
