#include "ciac/gesture_stream.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string_view>

#include "ciac/errors.hpp"

namespace ciac {

LabelStrategy LabelStrategy::strategy(int id) {
  using G = GestureClass;
  LabelStrategy s;
  s.id_ = id;
  s.map_.fill(G::Other);
  switch (id) {
    case 1:
      s.map_[2] = G::Positioning;
      s.map_[3] = G::Push;
      s.map_[6] = G::Pull;
      s.map_[4] = G::Handoff;
      break;
    case 2:
      s.map_[2] = s.map_[5] = G::Positioning;
      s.map_[3] = G::Push;
      s.map_[6] = s.map_[10] = G::Pull;
      s.map_[4] = s.map_[8] = G::Handoff;
      break;
    default:
      throw ConfigError("LabelStrategy: id must be 1 or 2");
  }
  return s;
}

GestureClass LabelStrategy::operator()(RawGestureLabel raw) const {
  if (raw < 0 || raw > kMaxRawLabel) throw ConfigError("LabelStrategy: raw label out of range");
  return map_[static_cast<std::size_t>(raw)];
}

KinematicSample RecordingRow::sample(DeviceId device, double timestamp) const {
  const std::size_t base = static_cast<std::size_t>(device) * KinematicSample::kFeatureCount;
  return KinematicSample::from_features(
      device, std::span<const double, KinematicSample::kFeatureCount>(values.data() + base, KinematicSample::kFeatureCount),
      timestamp);
}

void RecordingRow::set_sample(const KinematicSample& s) {
  const std::size_t base = static_cast<std::size_t>(s.device) * KinematicSample::kFeatureCount;
  const auto f = s.features();
  std::copy(f.begin(), f.end(), values.begin() + static_cast<std::ptrdiff_t>(base));
}

StreamFeatures stream_features(const RecordingRow& row) {
  StreamFeatures out;
  std::size_t k = 0;
  for (std::size_t d = 0; d < 4; ++d) {
    const std::size_t base = d * KinematicSample::kFeatureCount;
    for (std::size_t c = 12; c < 19; ++c) out[static_cast<Eigen::Index>(k++)] = row.values[base + c];
  }
  return out;
}

const std::vector<std::string>& recording_header() {
  static const std::vector<std::string> header = [] {
    static constexpr std::array<std::string_view, 19> fields = {
        "pos_x", "pos_y", "pos_z", "rot_00", "rot_01", "rot_02", "rot_10", "rot_11", "rot_12", "rot_20",
        "rot_21", "rot_22", "vel_x", "vel_y", "vel_z", "angvel_x", "angvel_y", "angvel_z", "gripper"};
    std::vector<std::string> h;
    for (DeviceId d : kAllDevices)
      for (auto f : fields) h.push_back(std::string(device_name(d)) + "_" + std::string(f));
    h.emplace_back("label");
    return h;
  }();
  return header;
}

namespace {

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(',', start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ')) s.remove_suffix(1);
  while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
  return s;
}

void append_double(std::string& out, double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  out.append(buf, res.ptr);
}

}  // namespace

std::vector<RecordingRow> load_recording(std::istream& in) {
  std::vector<RecordingRow> rows;
  std::string line;
  if (!std::getline(in, line)) return rows;

  const auto header = split_commas(trim(line));
  const auto& expected = recording_header();
  if (header.size() != RecordingRow::kColumns)
    throw ParseError("recording header has " + std::to_string(header.size()) + " columns, expected 77", 0);
  for (std::size_t i = 0; i < header.size(); ++i)
    if (trim(header[i]) != expected[i])
      throw ParseError("unexpected header column '" + std::string(header[i]) + "'", 0);

  std::size_t row_index = 0;
  while (std::getline(in, line)) {
    const std::string_view text = trim(line);
    if (text.empty()) continue;
    ++row_index;
    const auto cells = split_commas(text);
    if (cells.size() != RecordingRow::kColumns)
      throw ParseError("expected 77 columns, got " + std::to_string(cells.size()), row_index);
    RecordingRow row;
    for (std::size_t c = 0; c < RecordingRow::kFeatureColumns; ++c) {
      const std::string_view cell = trim(cells[c]);
      const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), row.values[c]);
      if (res.ec != std::errc() || res.ptr != cell.data() + cell.size() || !std::isfinite(row.values[c]))
        throw ParseError("non-numeric value in column " + expected[c], row_index);
    }
    const std::string_view lab = trim(cells.back());
    const auto res = std::from_chars(lab.data(), lab.data() + lab.size(), row.label);
    if (res.ec != std::errc() || res.ptr != lab.data() + lab.size() || row.label < 0 || row.label > kMaxRawLabel)
      throw ParseError("invalid gesture label", row_index);
    rows.push_back(row);
  }
  return rows;
}

std::vector<RecordingRow> load_recording(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string(), 0);
  return load_recording(in);
}

void write_recording(std::ostream& out, const std::vector<RecordingRow>& rows) {
  std::string buf;
  const auto& header = recording_header();
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (i) buf += ',';
    buf += header[i];
  }
  buf += '\n';
  out << buf;
  for (const auto& row : rows) {
    buf.clear();
    for (double v : row.values) {
      append_double(buf, v);
      buf += ',';
    }
    buf += std::to_string(row.label);
    buf += '\n';
    out << buf;
  }
}

void write_recording(const std::filesystem::path& path, const std::vector<RecordingRow>& rows) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  write_recording(out, rows);
}

LabeledRecording apply_strategy(const std::vector<RecordingRow>& rows, const LabelStrategy& strategy,
                                int recording_id) {
  LabeledRecording rec;
  rec.rows = rows;
  rec.recording_id = recording_id;
  rec.labels.reserve(rows.size());
  for (const auto& r : rows) rec.labels.push_back(strategy(r.label));
  return rec;
}

std::vector<LabeledWindow> extract_windows(const LabeledRecording& rec, std::size_t stride, std::size_t steps) {
  if (stride == 0) throw ConfigError("extract_windows: stride must be positive");
  if (steps == 0) throw ConfigError("extract_windows: steps must be positive");
  std::vector<LabeledWindow> out;
  if (rec.rows.size() < steps) return out;

  std::vector<StreamFeatures> feats;
  feats.reserve(rec.rows.size());
  for (const auto& r : rec.rows) feats.push_back(stream_features(r));

  for (std::size_t end = steps; end <= rec.rows.size(); end += stride) {
    LabeledWindow w;
    w.window.resize(static_cast<Eigen::Index>(steps), static_cast<Eigen::Index>(kStreamFeatures));
    for (std::size_t t = 0; t < steps; ++t)
      w.window.row(static_cast<Eigen::Index>(t)) = feats[end - steps + t].transpose();
    w.label = rec.labels[end - 1];
    w.recording_id = rec.recording_id;
    out.push_back(std::move(w));
  }
  return out;
}

Probabilities ema_average(const std::deque<Probabilities>& buffer, double gamma) {
  Probabilities acc = Probabilities::Zero();
  if (buffer.empty()) return Probabilities::Constant(1.0 / kGestureClassCount);
  double weight = 1.0;
  double total = 0.0;
  for (auto it = buffer.rbegin(); it != buffer.rend(); ++it) {
    acc += weight * *it;
    total += weight;
    weight *= 1.0 - gamma;
  }
  return acc / total;
}

Eigen::MatrixXd StreamState::window() const {
  Eigen::MatrixXd w(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(kStreamFeatures));
  for (std::size_t t = 0; t < rows.size(); ++t) w.row(static_cast<Eigen::Index>(t)) = rows[t].transpose();
  return w;
}

GestureClass stream_step(StreamState& state, const StreamFeatures& row, const ProbabilityModel& model) {
  state.rows.push_back(row);
  while (state.rows.size() > state.config.window_steps) state.rows.pop_front();
  if (!state.window_full()) return state.emitted;

  Probabilities p = model(state.window());
  if (!p.allFinite()) return state.emitted;
  state.raw = p;
  state.probabilities.push_back(p);
  while (state.probabilities.size() > state.config.ema_window) state.probabilities.pop_front();

  state.averaged = ema_average(state.probabilities, state.config.gamma());
  Eigen::Index best = 0;
  const double top = state.averaged.maxCoeff(&best);
  if (top >= state.config.threshold) state.emitted = static_cast<GestureClass>(best);
  return state.emitted;
}

}  // namespace ciac
