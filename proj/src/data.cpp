#include "aumn/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

#include "aumn/binary_io.hpp"
#include "aumn/rng.hpp"

namespace aumn {

namespace {

constexpr char kFeatureMagic[4] = {'A', 'U', 'F', '1'};
constexpr std::uint64_t kMaxFeatureEntries = std::uint64_t{1} << 28;

}  // namespace

void write_features(const std::filesystem::path& path, const Matrix& features) {
  if (!features.allFinite()) {
    throw ValidationError("write_features: matrix has non-finite entries");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw IoError("write_features: cannot open " + path.string());
  }
  out.write(kFeatureMagic, 4);
  write_u32_le(out, static_cast<std::uint32_t>(features.rows()));
  write_u32_le(out, static_cast<std::uint32_t>(features.cols()));
  write_tensor(out, features);
  if (!out) {
    throw IoError("write_features: write failed for " + path.string());
  }
}

Matrix read_features(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("read_features: cannot open " + path.string());
  }
  char magic[4];
  if (!in.read(magic, 4)) {
    throw TruncatedFileError("read_features: " + path.string() + " shorter than its header");
  }
  if (std::memcmp(magic, kFeatureMagic, 4) != 0) {
    throw BadMagicError("read_features: " + path.string() + " is not an AUF1 feature file");
  }
  std::uint32_t rows = 0, cols = 0;
  if (!read_u32_le(in, rows) || !read_u32_le(in, cols)) {
    throw TruncatedFileError("read_features: " + path.string() + " shorter than its header");
  }
  const std::uint64_t entries = static_cast<std::uint64_t>(rows) * cols;
  if (rows == 0 || cols == 0 || entries > kMaxFeatureEntries) {
    throw DimensionOverflowError("read_features: " + path.string() + " declares " +
                                 std::to_string(rows) + "x" + std::to_string(cols) +
                                 ", outside the supported range");
  }
  Matrix m(static_cast<Index>(rows), static_cast<Index>(cols));
  if (!read_tensor(in, m)) {
    throw TruncatedFileError("read_features: " + path.string() +
                             " payload shorter than the declared shape");
  }
  if (in.peek() != std::ifstream::traits_type::eof()) {
    throw IoError("read_features: " + path.string() + " has trailing bytes");
  }
  return m;
}

std::vector<std::vector<int>> default_units_per_class(Index num_classes, Index num_units) {
  std::vector<std::vector<int>> units(static_cast<std::size_t>(num_classes));
  for (Index c = 0; c < num_classes; ++c) {
    units[static_cast<std::size_t>(c)] = {static_cast<int>(c % num_units),
                                          static_cast<int>((c + 1) % num_units)};
  }
  return units;
}

void validate(const SyntheticSpec& spec) {
  if (spec.U < 2 || spec.C < 2 || spec.D < 2 || spec.videos < 1 || spec.segments_per_video < 1 ||
      spec.instances_per_video < 1) {
    throw ValidationError("synthetic spec: U, C, D >= 2 and positive counts required");
  }
  if (!(spec.action_fraction > 0 && spec.action_fraction < 1)) {
    throw ValidationError("synthetic spec: action_fraction must lie in (0, 1)");
  }
  if (!(spec.noise_std >= 0) || !std::isfinite(spec.noise_std)) {
    throw ValidationError("synthetic spec: noise_std must be finite and nonnegative");
  }
  if (static_cast<Index>(spec.units_per_class.size()) != spec.C) {
    throw ValidationError("synthetic spec: units_per_class must list every class");
  }
  std::vector<int> use_count(static_cast<std::size_t>(spec.U), 0);
  Index max_units = 0;
  for (std::size_t c = 0; c < spec.units_per_class.size(); ++c) {
    const auto& units = spec.units_per_class[c];
    if (units.size() < 2 || units.size() > 3) {
      throw ValidationError("synthetic spec: class " + std::to_string(c) +
                            " must use 2-3 action units");
    }
    std::set<int> seen;
    for (int u : units) {
      if (u < 0 || u >= spec.U) {
        throw ValidationError("synthetic spec: class " + std::to_string(c) +
                              " references unknown unit " + std::to_string(u));
      }
      if (!seen.insert(u).second) {
        throw ValidationError("synthetic spec: class " + std::to_string(c) +
                              " repeats a unit id");
      }
      use_count[static_cast<std::size_t>(u)] += 1;
    }
    max_units = std::max<Index>(max_units, static_cast<Index>(units.size()));
  }
  if (std::none_of(use_count.begin(), use_count.end(), [](int n) { return n >= 2; })) {
    throw ValidationError("synthetic spec: no action unit is shared between classes");
  }

  const Index budget = static_cast<Index>(
      std::llround(spec.action_fraction * static_cast<Real>(spec.segments_per_video)));
  const Index min_share = budget / spec.instances_per_video;
  if (min_share < 2 * max_units) {
    throw ValidationError(
        "synthetic spec: infeasible — the action budget of " + std::to_string(budget) +
        " segments cannot give each of " + std::to_string(spec.instances_per_video) +
        " instances at least 2 segments per unit (worst class uses " + std::to_string(max_units) +
        " units); raise action_fraction or segments_per_video, or lower instances_per_video");
  }
  if (spec.segments_per_video - budget < 3 * (spec.instances_per_video - 1)) {
    throw ValidationError(
        "synthetic spec: infeasible — instances need three background segments between them, "
        "and the budget leaves fewer than " +
        std::to_string(3 * (spec.instances_per_video - 1)));
  }
}

namespace {

Vector sample_direction(Index dim, Rng& rng) {
  Vector v(dim);
  for (Index i = 0; i < dim; ++i) v(i) = rng.normal();
  const Real n = v.norm();
  return v / (n > 0 ? n : 1);
}

// Unit prototypes plus one background direction, all pairwise |cos| < 0.3.
std::vector<Vector> sample_prototypes(const SyntheticSpec& spec, Rng& rng) {
  std::vector<Vector> dirs;
  const std::size_t want = static_cast<std::size_t>(spec.U) + 1;
  int attempts = 0;
  while (dirs.size() < want) {
    if (++attempts > 100000) {
      throw ValidationError(
          "synthetic spec: cannot sample near-orthogonal prototypes; lower U or raise D");
    }
    Vector v = sample_direction(spec.D, rng);
    bool ok = true;
    for (const Vector& d : dirs) {
      if (std::abs(d.dot(v)) >= 0.3) {
        ok = false;
        break;
      }
    }
    if (ok) dirs.push_back(std::move(v));
  }
  return dirs;
}

std::string video_name(Index i) {
  std::ostringstream name;
  name << "v";
  std::string digits = std::to_string(i);
  for (std::size_t k = digits.size(); k < 4; ++k) name << '0';
  name << digits;
  return name.str();
}

}  // namespace

DatasetManifest generate_synthetic(const SyntheticSpec& spec,
                                   const std::filesystem::path& out_dir) {
  validate(spec);
  std::filesystem::create_directories(out_dir / "features");
  Rng rng(spec.seed);
  const std::vector<Vector> dirs = sample_prototypes(spec, rng);
  const Vector& background = dirs.back();
  const Index l = spec.segments_per_video;
  const Index n_inst = spec.instances_per_video;
  const Index budget =
      static_cast<Index>(std::llround(spec.action_fraction * static_cast<Real>(l)));

  DatasetManifest manifest;
  manifest.unit = "segments";
  manifest.num_classes = spec.C;
  manifest.base_dir = out_dir;

  const std::vector<std::string> streams = {"rgb", "flow"};
  for (Index vi = 0; vi < spec.videos; ++vi) {
    VideoRecord rec;
    rec.video_id = video_name(vi);

    // Latent script: instance classes, per-instance segment shares, placement.
    std::vector<int> classes(static_cast<std::size_t>(n_inst));
    for (auto& c : classes) c = static_cast<int>(rng.uniform_int(spec.C));

    std::vector<Index> share(static_cast<std::size_t>(n_inst), budget / n_inst);
    for (Index i = 0; i < budget % n_inst; ++i) share[static_cast<std::size_t>(i)] += 1;

    // Three background segments minimum between instances, so attention
    // spill from one instance cannot merge runs across its neighbor.
    std::vector<Index> gaps(static_cast<std::size_t>(n_inst) + 1, 0);
    for (std::size_t i = 1; i < gaps.size() - 1; ++i) gaps[i] = 3;
    Index slack = l - budget - 3 * (n_inst - 1);
    for (Index i = 0; i < slack; ++i) {
      gaps[static_cast<std::size_t>(rng.uniform_int(n_inst + 1))] += 1;
    }

    std::vector<int> script(static_cast<std::size_t>(l), -1);  // -1 = background
    std::vector<int> occurrence(static_cast<std::size_t>(l), -1);
    int occurrence_count = 0;
    rec.segment_labels.assign(static_cast<std::size_t>(l), 0);
    Index cursor = gaps[0];
    for (Index i = 0; i < n_inst; ++i) {
      const auto& units = spec.units_per_class[static_cast<std::size_t>(classes[i])];
      const Index n_u = static_cast<Index>(units.size());
      // Leading units absorb the slack, so the first-listed unit dominates
      // the instance the way a primary motion dominates a real action.
      std::vector<Index> unit_len(units.size(), 2);
      Index extra = share[static_cast<std::size_t>(i)] - 2 * n_u;
      for (std::size_t u = 0; u < units.size() && extra > 0; ++u) {
        const Index take = std::min<Index>(extra, 2);
        unit_len[u] += take;
        extra -= take;
      }
      for (Index e = 0; e < extra; ++e) unit_len[static_cast<std::size_t>(e % n_u)] += 1;

      const Index start = cursor;
      for (std::size_t u = 0; u < units.size(); ++u) {
        for (Index k = 0; k < unit_len[u]; ++k) {
          script[static_cast<std::size_t>(cursor)] = units[u];
          occurrence[static_cast<std::size_t>(cursor)] = occurrence_count;
          rec.segment_labels[static_cast<std::size_t>(cursor)] = 1;
          ++cursor;
        }
        ++occurrence_count;
      }
      rec.ground_truth.push_back({classes[i], start, cursor - 1});
      cursor += gaps[static_cast<std::size_t>(i) + 1];
    }

    std::set<int> present(classes.begin(), classes.end());
    rec.label = Vector::Zero(spec.C);
    for (int c : present) rec.label(c) = 1.0 / static_cast<Real>(present.size());

    // One action occurrence renders nearly self-similar features (a real
    // athlete's running looks like itself from one 16-frame chunk to the
    // next). The coherent per-occurrence offset is part of the latent script
    // and therefore shared by both streams; only the smaller per-segment
    // jitter and the background noise are re-rendered independently.
    Matrix occ_offsets(occurrence_count, spec.D);
    for (Index i = 0; i < occ_offsets.size(); ++i) {
      occ_offsets.data()[i] = spec.noise_std * rng.normal();
    }

    for (const std::string& stream : streams) {
      // Background noise is smoothed with a length-3 moving average so
      // neighboring segments stay correlated the way overlapping video
      // content is.
      Matrix raw(l + 2, spec.D);
      for (Index i = 0; i < raw.size(); ++i) raw.data()[i] = rng.normal();
      const Real ma_scale = spec.noise_std / std::sqrt(3.0);
      const Real jitter = spec.noise_std / 3.0;
      Matrix features(l, spec.D);
      for (Index t = 0; t < l; ++t) {
        const std::size_t ts = static_cast<std::size_t>(t);
        if (script[ts] >= 0) {
          features.row(t) = dirs[static_cast<std::size_t>(script[ts])].transpose() +
                            occ_offsets.row(occurrence[ts]);
          features.row(t) +=
              (jitter / std::sqrt(3.0)) * (raw.row(t) + raw.row(t + 1) + raw.row(t + 2));
        } else {
          features.row(t) = background.transpose() +
                            ma_scale * (raw.row(t) + raw.row(t + 1) + raw.row(t + 2));
        }
      }
      const std::string rel = "features/" + rec.video_id + "_" + stream + ".auf";
      write_features(out_dir / rel, features);
      rec.feature_paths[stream] = rel;
    }
    manifest.records.push_back(std::move(rec));
  }
  validate_manifest(manifest);
  return manifest;
}

namespace {

using nlohmann::json;

json record_to_json(const VideoRecord& rec) {
  json j;
  j["video_id"] = rec.video_id;
  json features = json::object();
  for (const auto& [stream, path] : rec.feature_paths) features[stream] = path;
  j["features"] = features;
  j["label"] = std::vector<Real>(rec.label.data(), rec.label.data() + rec.label.size());
  json gt = json::array();
  for (const GtSpan& g : rec.ground_truth) {
    gt.push_back({{"class_id", g.class_id}, {"start", g.start}, {"end", g.end}});
  }
  j["ground_truth"] = gt;
  if (!rec.segment_labels.empty()) j["segment_labels"] = rec.segment_labels;
  return j;
}

VideoRecord record_from_json(const json& j, const std::string& unit, Real segment_seconds) {
  VideoRecord rec;
  rec.video_id = j.at("video_id").get<std::string>();
  for (const auto& [stream, path] : j.at("features").items()) {
    rec.feature_paths[stream] = path.get<std::string>();
  }
  const auto label = j.at("label").get<std::vector<Real>>();
  rec.label = Eigen::Map<const Vector>(label.data(), static_cast<Index>(label.size()));
  for (const json& g : j.at("ground_truth")) {
    GtSpan span;
    span.class_id = g.at("class_id").get<int>();
    if (unit == "seconds") {
      // Quantize second boundaries onto the segment grid the features use.
      const Real s = g.at("start").get<Real>();
      const Real e = g.at("end").get<Real>();
      span.start = static_cast<Index>(std::floor(s / segment_seconds + 1e-9));
      span.end = std::max(span.start,
                          static_cast<Index>(std::ceil(e / segment_seconds - 1e-9)) - 1);
    } else {
      span.start = g.at("start").get<Index>();
      span.end = g.at("end").get<Index>();
    }
    rec.ground_truth.push_back(span);
  }
  if (j.contains("segment_labels")) {
    rec.segment_labels = j.at("segment_labels").get<std::vector<int>>();
  }
  return rec;
}

}  // namespace

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
  json j;
  j["version"] = manifest.version;
  j["unit"] = manifest.unit;
  if (manifest.segment_seconds > 0) j["segment_seconds"] = manifest.segment_seconds;
  j["num_classes"] = manifest.num_classes;
  json records = json::array();
  for (const VideoRecord& rec : manifest.records) records.push_back(record_to_json(rec));
  j["records"] = records;
  std::ofstream out(path);
  if (!out) {
    throw IoError("save_manifest: cannot open " + path.string());
  }
  out << j.dump(2) << "\n";
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw IoError("load_manifest: cannot open " + path.string());
  }
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) {
    throw IoError("load_manifest: " + path.string() + " is not valid JSON");
  }
  DatasetManifest manifest;
  try {
    manifest.version = j.at("version").get<int>();
    manifest.unit = j.at("unit").get<std::string>();
    manifest.num_classes = j.at("num_classes").get<Index>();
    if (j.contains("segment_seconds")) {
      manifest.segment_seconds = j.at("segment_seconds").get<Real>();
    }
    if (manifest.unit == "seconds" && !(manifest.segment_seconds > 0)) {
      throw ValidationError("manifest: 'seconds' unit requires a positive segment_seconds");
    }
    for (const json& rec : j.at("records")) {
      manifest.records.push_back(record_from_json(rec, manifest.unit, manifest.segment_seconds));
    }
  } catch (const json::exception& e) {
    throw IoError("load_manifest: " + path.string() + ": " + e.what());
  }
  if (manifest.unit != "segments" && manifest.unit != "seconds") {
    throw ValidationError("manifest: unknown unit '" + manifest.unit + "'");
  }
  // Spans are segment-valued in memory regardless of the on-disk unit.
  manifest.unit = "segments";
  manifest.base_dir = path.parent_path();
  validate_manifest(manifest);
  return manifest;
}

void validate_manifest(const DatasetManifest& manifest) {
  if (manifest.version != 1) {
    throw ValidationError("manifest: unsupported version " + std::to_string(manifest.version));
  }
  if (manifest.unit != "segments" && manifest.unit != "seconds") {
    throw ValidationError("manifest: unknown unit '" + manifest.unit + "'");
  }
  if (manifest.num_classes < 1) {
    throw ValidationError("manifest: num_classes must be >= 1");
  }
  std::set<std::string> ids;
  for (const VideoRecord& rec : manifest.records) {
    const std::string where = "manifest record '" + rec.video_id + "'";
    if (!ids.insert(rec.video_id).second) {
      throw ValidationError("manifest: duplicate video_id '" + rec.video_id + "'");
    }
    if (rec.feature_paths.empty()) {
      throw ValidationError(where + ": no feature streams");
    }
    if (rec.label.size() != manifest.num_classes) {
      throw ValidationError(where + ": label length differs from num_classes");
    }
    Real sum = 0;
    for (Index c = 0; c < rec.label.size(); ++c) {
      const Real v = rec.label(c);
      if (!(v >= 0 && v <= 1)) {
        throw ValidationError(where + ": label entries must lie in [0, 1]");
      }
      sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-12) {
      throw ValidationError(where + ": label must be l1-normalized");
    }
    std::set<int> gt_classes;
    for (const GtSpan& g : rec.ground_truth) {
      if (g.class_id < 0 || g.class_id >= manifest.num_classes) {
        throw ValidationError(where + ": ground-truth class out of range");
      }
      if (g.start < 0 || g.end < g.start) {
        throw ValidationError(where + ": ground-truth span must satisfy 0 <= start <= end");
      }
      gt_classes.insert(g.class_id);
    }
    if (!rec.ground_truth.empty()) {
      std::set<int> support;
      for (Index c = 0; c < rec.label.size(); ++c) {
        if (rec.label(c) > 0) support.insert(static_cast<int>(c));
      }
      if (support != gt_classes) {
        throw ValidationError(where + ": label support differs from ground-truth classes");
      }
    }
    for (int v : rec.segment_labels) {
      if (v != 0 && v != 1) {
        throw ValidationError(where + ": segment_labels must be binary");
      }
    }
  }
}

std::vector<GroundTruthInstance> all_ground_truth(const DatasetManifest& manifest) {
  std::vector<GroundTruthInstance> out;
  for (const VideoRecord& rec : manifest.records) {
    for (const GtSpan& g : rec.ground_truth) {
      out.push_back({rec.video_id, g.class_id, g.start, g.end});
    }
  }
  return out;
}

Matrix read_stream_features(const DatasetManifest& manifest, const VideoRecord& record,
                            const std::string& stream) {
  const auto it = record.feature_paths.find(stream);
  if (it == record.feature_paths.end()) {
    throw ValidationError("record '" + record.video_id + "' has no '" + stream + "' stream");
  }
  return read_features(manifest.base_dir / it->second);
}

}  // namespace aumn
