#include "skewprune/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "skewprune/errors.hpp"
#include "skewprune/rng.hpp"

namespace skewprune {

namespace fs = std::filesystem;

Tensor Dataset::image_batch(const std::vector<int64_t>& idx) const {
  if (idx.empty()) throw ArgumentError("image_batch: empty index list");
  Tensor out = Tensor::zeros({static_cast<int64_t>(idx.size()), 3, image_size, image_size});
  const int64_t per = 3 * image_size * image_size;
  for (size_t i = 0; i < idx.size(); ++i) {
    const Sample& s = samples.at(static_cast<size_t>(idx[i]));
    std::copy(s.image.data.begin(), s.image.data.end(),
              out.data.begin() + static_cast<int64_t>(i) * per);
  }
  return out;
}

std::vector<TabularInput> Dataset::tabular_batch(const std::vector<int64_t>& idx) const {
  std::vector<TabularInput> out;
  out.reserve(idx.size());
  for (const int64_t i : idx) out.push_back(samples.at(static_cast<size_t>(i)).tabular);
  return out;
}

std::vector<int64_t> Dataset::label_batch(const std::vector<int64_t>& idx) const {
  std::vector<int64_t> out;
  out.reserve(idx.size());
  for (const int64_t i : idx) out.push_back(samples.at(static_cast<size_t>(i)).label);
  return out;
}

Dataset Dataset::subset(const std::vector<int64_t>& idx) const {
  Dataset out;
  out.image_size = image_size;
  out.num_classes = num_classes;
  out.samples.reserve(idx.size());
  for (const int64_t i : idx) out.samples.push_back(samples.at(static_cast<size_t>(i)));
  return out;
}

void SynthConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("synth config: " + m); };
  if (num_classes < 2) fail("num_classes must be >= 2");
  if (n < num_classes) fail("n must be >= num_classes for class balance");
  if (image_size < 4) fail("image_size must be >= 4");
  if (tabular_correlation < 0.0 || tabular_correlation > 1.0) {
    fail("tabular_correlation must lie in [0,1]");
  }
  if (!(radius_min > 0.0f) || radius_max < radius_min || radius_max > 0.5f) {
    fail("blob radius range must satisfy 0 < min <= max <= 0.5");
  }
  if (!(eccentricity_min > 0.0f) || eccentricity_max < eccentricity_min ||
      eccentricity_max > 1.0f) {
    fail("eccentricity range must satisfy 0 < min <= max <= 1");
  }
  if (blob_color_std < 0.0f || background_noise < 0.0f) {
    fail("noise magnitudes must be non-negative");
  }
}

namespace {

float clamp01(float v) { return v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v); }

// Distinct, saturated blob color per class: evenly spaced hues.
std::array<float, 3> class_color(int64_t k, int64_t num_classes) {
  const float h = 6.0f * static_cast<float>(k) / static_cast<float>(num_classes);
  const float s = 0.8f, v = 0.75f;
  const int sector = static_cast<int>(h) % 6;
  const float f = h - std::floor(h);
  const float p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  switch (sector) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

// Deterministic class-conditional tabular ids used at correlation 1.
TabularInput class_tabular(int64_t k) {
  TabularInput t;
  t.sex_id = 1 + k % 2;
  t.age_bucket_id = 1 + (3 * k) % 21;
  t.localization_id = 1 + k % 15;
  return t;
}

}  // namespace

Dataset generate(const SynthConfig& cfg) {
  cfg.validate();
  Dataset ds;
  ds.image_size = cfg.image_size;
  ds.num_classes = cfg.num_classes;
  ds.samples.reserve(static_cast<size_t>(cfg.n));
  const Rng root = Rng(cfg.seed).derive("synth");
  const int64_t s = cfg.image_size;
  for (int64_t i = 0; i < cfg.n; ++i) {
    Rng rng = root.derive(static_cast<uint64_t>(i));
    const int64_t label = i % cfg.num_classes;
    Sample sample;
    sample.label = label;

    // Textured background: skin tone + low-frequency waves + per-pixel noise.
    Tensor img = Tensor::zeros({3, s, s});
    const std::array<float, 3> base = {0.76f, 0.60f, 0.52f};
    const double fx = rng.uniform(0.5, 2.0), fy = rng.uniform(0.5, 2.0);
    const double phase = rng.uniform(0.0, 6.28318530717958647692);
    for (int64_t y = 0; y < s; ++y) {
      for (int64_t x = 0; x < s; ++x) {
        const float wave = 0.06f * static_cast<float>(
            std::sin(fx * 6.28318530717958647692 * x / s +
                     fy * 6.28318530717958647692 * y / s + phase));
        for (int64_t c = 0; c < 3; ++c) {
          const float noise =
              cfg.background_noise * (static_cast<float>(rng.uniform()) - 0.5f);
          img.data[static_cast<size_t>(c * s * s + y * s + x)] =
              clamp01(base[static_cast<size_t>(c)] + wave + noise);
        }
      }
    }

    // One elliptical blob with class-determined color statistics.
    const double radius = rng.uniform(cfg.radius_min, cfg.radius_max) * s;
    const double ecc = rng.uniform(cfg.eccentricity_min, cfg.eccentricity_max);
    const double theta = rng.uniform(0.0, 3.14159265358979323846);
    const double cx = rng.uniform(0.3, 0.7) * s, cy = rng.uniform(0.3, 0.7) * s;
    const double ct = std::cos(theta), st = std::sin(theta);
    const std::array<float, 3> mean = class_color(label, cfg.num_classes);
    std::array<float, 3> color;
    for (size_t c = 0; c < 3; ++c) {
      color[c] = clamp01(mean[c] + cfg.blob_color_std * static_cast<float>(rng.normal()));
    }
    for (int64_t y = 0; y < s; ++y) {
      for (int64_t x = 0; x < s; ++x) {
        const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
        const double u = (ct * dx + st * dy) / radius;
        const double v = (-st * dx + ct * dy) / (radius * ecc);
        const double r2 = u * u + v * v;
        if (r2 >= 1.0) continue;
        const float alpha = static_cast<float>(std::min(1.0, 4.0 * (1.0 - r2)));  // soft rim
        for (int64_t c = 0; c < 3; ++c) {
          float& px = img.data[static_cast<size_t>(c * s * s + y * s + x)];
          px = clamp01((1 - alpha) * px + alpha * color[static_cast<size_t>(c)]);
        }
      }
    }
    sample.image = std::move(img);

    // Tabular ids: each field independently follows the class with the
    // configured probability, otherwise is uniform over its full vocabulary.
    const TabularInput tied = class_tabular(label);
    TabularInput tab;
    tab.sex_id = rng.uniform() < cfg.tabular_correlation ? tied.sex_id : rng.uniform_int(0, 2);
    tab.age_bucket_id =
        rng.uniform() < cfg.tabular_correlation ? tied.age_bucket_id : rng.uniform_int(0, 21);
    tab.localization_id =
        rng.uniform() < cfg.tabular_correlation ? tied.localization_id : rng.uniform_int(0, 15);
    sample.tabular = tab;
    ds.samples.push_back(std::move(sample));
  }
  return ds;
}

const std::vector<std::string>& diagnosis_codes() {
  static const std::vector<std::string> codes = {"akiec", "bkl", "bcc", "df",
                                                 "nv",    "mel", "vasc"};
  return codes;
}

int64_t diagnosis_to_class(const std::string& dx) {
  const auto& codes = diagnosis_codes();
  for (size_t i = 0; i < codes.size(); ++i) {
    if (codes[i] == dx) return static_cast<int64_t>(i);
  }
  throw IngestError("unknown diagnosis \"" + dx + "\"");
}

int64_t age_to_bucket(const std::string& age_text) {
  if (age_text.empty() || age_text == "unknown") return 0;
  double age = 0.0;
  try {
    size_t used = 0;
    age = std::stod(age_text, &used);
    if (used != age_text.size()) throw std::invalid_argument(age_text);
  } catch (const std::exception&) {
    throw IngestError("unparseable age \"" + age_text + "\"");
  }
  if (age < 0.0) throw IngestError("negative age \"" + age_text + "\"");
  const int64_t bucket = 1 + static_cast<int64_t>(age / 5.0);
  return std::min<int64_t>(bucket, 21);
}

int64_t sex_to_id(const std::string& sex_text) {
  if (sex_text.empty() || sex_text == "unknown") return 0;
  if (sex_text == "male") return 1;
  if (sex_text == "female") return 2;
  throw IngestError("unknown sex \"" + sex_text + "\"");
}

const std::vector<std::string>& localization_names() {
  static const std::vector<std::string> names = {
      "unknown",       "abdomen", "acral", "back",  "chest",
      "ear",           "face",    "foot",  "genital", "hand",
      "lateral torso", "lower extremity",  "neck",  "scalp",
      "trunk",         "upper extremity"};
  return names;
}

int64_t localization_to_id(const std::string& loc_text) {
  if (loc_text.empty()) return 0;
  const auto& names = localization_names();
  for (size_t i = 0; i < names.size(); ++i) {
    if (names[i] == loc_text) return static_cast<int64_t>(i);
  }
  throw IngestError("unknown localization \"" + loc_text + "\"");
}

namespace {

void write_ppm(const std::string& path, const Tensor& img) {
  const int64_t h = img.shape[1], w = img.shape[2];
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IngestError("cannot write image " + path);
  f << "P6\n" << w << " " << h << "\n255\n";
  std::vector<uint8_t> row(static_cast<size_t>(3 * w));
  for (int64_t y = 0; y < h; ++y) {
    for (int64_t x = 0; x < w; ++x) {
      for (int64_t c = 0; c < 3; ++c) {
        const float v = img.data[static_cast<size_t>(c * h * w + y * w + x)];
        row[static_cast<size_t>(3 * x + c)] =
            static_cast<uint8_t>(std::lround(clamp01(v) * 255.0f));
      }
    }
    f.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
  if (!f) throw IngestError("short write on image " + path);
}

int64_t read_ppm_token(std::istream& in, const std::string& path) {
  // Skips whitespace and '#' comments between header tokens.
  int ch = in.get();
  while (ch != EOF && (std::isspace(ch) || ch == '#')) {
    if (ch == '#') {
      while (ch != EOF && ch != '\n') ch = in.get();
    }
    ch = in.get();
  }
  int64_t value = -1;
  while (ch != EOF && std::isdigit(ch)) {
    if (value < 0) value = 0;
    value = value * 10 + (ch - '0');
    ch = in.get();
  }
  if (value < 0) throw IngestError("malformed image header in " + path);
  return value;
}

Tensor read_ppm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IngestError("cannot read image " + path);
  char m0 = 0, m1 = 0;
  f.get(m0);
  f.get(m1);
  if (m0 != 'P' || m1 != '6') throw IngestError("not a binary PPM (P6): " + path);
  const int64_t w = read_ppm_token(f, path);
  const int64_t h = read_ppm_token(f, path);
  const int64_t maxval = read_ppm_token(f, path);
  if (w < 1 || h < 1 || maxval != 255) throw IngestError("unsupported PPM header in " + path);
  // The token reader consumed the single whitespace byte after maxval.
  std::vector<uint8_t> raw(static_cast<size_t>(3 * w * h));
  f.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (f.gcount() != static_cast<std::streamsize>(raw.size())) {
    throw IngestError("truncated image data in " + path);
  }
  Tensor img = Tensor::zeros({3, h, w});
  for (int64_t y = 0; y < h; ++y) {
    for (int64_t x = 0; x < w; ++x) {
      for (int64_t c = 0; c < 3; ++c) {
        img.data[static_cast<size_t>(c * h * w + y * w + x)] =
            static_cast<float>(raw[static_cast<size_t>(3 * (y * w + x) + c)]) / 255.0f;
      }
    }
  }
  return img;
}

std::string image_name(int64_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "img_%06lld", static_cast<long long>(i));
  return buf;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (const char ch : line) {
    if (ch == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  fields.push_back(cur);
  return fields;
}

}  // namespace

Tensor resize_bilinear(const Tensor& img, int64_t out_size) {
  if (img.rank() != 3 || img.shape[0] != 3) {
    throw DimensionError("resize: expected [3 x H x W], got " + img.shape_str());
  }
  const int64_t h = img.shape[1], w = img.shape[2];
  if (h == out_size && w == out_size) return img;
  Tensor out = Tensor::zeros({3, out_size, out_size});
  for (int64_t y = 0; y < out_size; ++y) {
    const double sy = (y + 0.5) * static_cast<double>(h) / out_size - 0.5;
    const int64_t y0 = std::clamp<int64_t>(static_cast<int64_t>(std::floor(sy)), 0, h - 1);
    const int64_t y1 = std::min<int64_t>(y0 + 1, h - 1);
    const double wy = std::clamp(sy - static_cast<double>(y0), 0.0, 1.0);
    for (int64_t x = 0; x < out_size; ++x) {
      const double sx = (x + 0.5) * static_cast<double>(w) / out_size - 0.5;
      const int64_t x0 = std::clamp<int64_t>(static_cast<int64_t>(std::floor(sx)), 0, w - 1);
      const int64_t x1 = std::min<int64_t>(x0 + 1, w - 1);
      const double wx = std::clamp(sx - static_cast<double>(x0), 0.0, 1.0);
      for (int64_t c = 0; c < 3; ++c) {
        const double p00 = img.data[static_cast<size_t>(c * h * w + y0 * w + x0)];
        const double p01 = img.data[static_cast<size_t>(c * h * w + y0 * w + x1)];
        const double p10 = img.data[static_cast<size_t>(c * h * w + y1 * w + x0)];
        const double p11 = img.data[static_cast<size_t>(c * h * w + y1 * w + x1)];
        const double top = p00 + (p01 - p00) * wx;
        const double bot = p10 + (p11 - p10) * wx;
        out.data[static_cast<size_t>(c * out_size * out_size + y * out_size + x)] =
            static_cast<float>(top + (bot - top) * wy);
      }
    }
  }
  return out;
}

void write_directory(const Dataset& ds, const std::string& dir) {
  fs::create_directories(fs::path(dir) / "images");
  std::ofstream csv(fs::path(dir) / "metadata.csv", std::ios::trunc);
  if (!csv) throw IngestError("cannot write metadata table in " + dir);
  csv << "image_id,dx,age,sex,localization\n";
  const std::array<const char*, 3> sexes = {"unknown", "male", "female"};
  for (int64_t i = 0; i < ds.size(); ++i) {
    const Sample& s = ds.samples[static_cast<size_t>(i)];
    const std::string id = image_name(i);
    write_ppm((fs::path(dir) / "images" / (id + ".ppm")).string(), s.image);
    csv << id << "," << diagnosis_codes().at(static_cast<size_t>(s.label)) << ",";
    if (s.tabular.age_bucket_id > 0) csv << 5 * (s.tabular.age_bucket_id - 1) + 2;
    csv << "," << sexes.at(static_cast<size_t>(s.tabular.sex_id)) << ","
        << localization_names().at(static_cast<size_t>(s.tabular.localization_id)) << "\n";
  }
  if (!csv) throw IngestError("short write on metadata table in " + dir);
}

Dataset load_directory(const std::string& table_path, const std::string& image_dir,
                       int64_t image_size) {
  std::ifstream csv(table_path);
  if (!csv) throw IngestError("cannot open metadata table " + table_path);
  std::string line;
  if (!std::getline(csv, line)) throw IngestError("empty metadata table " + table_path);
  const auto header = split_csv_line(line);
  std::map<std::string, size_t> col;
  for (size_t i = 0; i < header.size(); ++i) col[header[i]] = i;
  for (const char* need : {"image_id", "dx", "age", "sex", "localization"}) {
    if (col.find(need) == col.end()) {
      throw IngestError("metadata table " + table_path + " lacks column \"" + need + "\"");
    }
  }
  Dataset ds;
  ds.image_size = image_size;
  ds.num_classes = static_cast<int64_t>(diagnosis_codes().size());
  int64_t row_no = 1;
  while (std::getline(csv, line)) {
    ++row_no;
    if (line.empty() || line == "\r") continue;
    const auto fields = split_csv_line(line);
    if (fields.size() < header.size()) {
      throw IngestError("row " + std::to_string(row_no) + ": expected " +
                        std::to_string(header.size()) + " fields, got " +
                        std::to_string(fields.size()));
    }
    Sample s;
    try {
      s.label = diagnosis_to_class(fields[col["dx"]]);
      s.tabular.age_bucket_id = age_to_bucket(fields[col["age"]]);
      s.tabular.sex_id = sex_to_id(fields[col["sex"]]);
      s.tabular.localization_id = localization_to_id(fields[col["localization"]]);
    } catch (const IngestError& e) {
      throw IngestError("row " + std::to_string(row_no) + ": " + e.what());
    }
    const std::string path =
        (fs::path(image_dir) / (fields[col["image_id"]] + ".ppm")).string();
    s.image = resize_bilinear(read_ppm(path), image_size);
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

Dataset load_data_dir(const std::string& dir, int64_t image_size) {
  return load_directory((fs::path(dir) / "metadata.csv").string(),
                        (fs::path(dir) / "images").string(), image_size);
}

std::vector<std::vector<int64_t>> batches(int64_t n, int64_t batch_size, uint64_t seed,
                                          int64_t epoch) {
  if (batch_size < 1) throw ArgumentError("batch_size must be >= 1");
  if (n < 0) throw ArgumentError("negative dataset size");
  std::vector<int64_t> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  Rng rng = Rng(seed).derive("batches").derive(static_cast<uint64_t>(epoch));
  rng.shuffle(order);
  std::vector<std::vector<int64_t>> out;
  for (int64_t start = 0; start < n; start += batch_size) {
    const int64_t end = std::min(n, start + batch_size);
    out.emplace_back(order.begin() + start, order.begin() + end);
  }
  return out;
}

}  // namespace skewprune
