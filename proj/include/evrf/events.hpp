#pragma once

// ESIM-style event generation from continuous per-pixel log-radiance,
// event-stream integration, and the binary event file codec.
//
// Event file layout (little-endian):
//   header: magic "EVNF", u32 version, u16 W, u16 H, f32 C_pos, f32 C_neg
//   record: u64 t_curr (ns), u64 t_prev (ns), u16 x, u16 y, i8 polarity
// Records are sorted by t_curr.

#include <algorithm>
#include <atomic>
#include <cstring>
#include <fstream>
#include <functional>
#include <string>
#include <thread>
#include <vector>

#include "evrf/math.hpp"
#include "evrf/scene.hpp"
#include "evrf/trajectory.hpp"

namespace evrf {

struct ContrastThresholds {
  double c_pos{0.25};
  double c_neg{0.25};
  bool learnable{false};

  double mean() const { return 0.5 * (c_pos + c_neg); }

  void validate() const {
    if (!(c_pos > 0.0) || !(c_neg > 0.0))
      throw std::invalid_argument("contrast thresholds must be strictly positive");
  }
};

struct Event {
  std::uint16_t x{0}, y{0};
  std::int8_t polarity{1};  // +1 or -1
  double t_prev{0.0};       // previous event timestamp at this pixel
  double t_curr{0.0};
};

struct EventStream {
  std::vector<Event> events;  // sorted by (t_curr, y, x)
  int width{0}, height{0};
  ContrastThresholds thresholds;
};

// ---------------------------------------------------------------------------
// Simulation.
// ---------------------------------------------------------------------------

// Generates events from an arbitrary per-pixel log-radiance signal, sampled
// on a dt grid with linear interpolation between samples. The per-pixel
// reference level starts at the signal value at t_start; a pixel's first
// event therefore has t_prev = t_start. Emissions within the refractory
// window of the previous emission at the same pixel are suppressed (the
// reference still advances, so later events stay consistent).
inline EventStream simulate_events(
    const std::function<double(int px, int py, int step)>& log_radiance_grid,
    int width, int height, double t_start, double dt, int n_steps,
    const ContrastThresholds& thresholds, double refractory) {
  thresholds.validate();
  if (dt <= 0.0) throw std::invalid_argument("simulate: dt must be > 0");
  if (refractory < 0.0) throw std::invalid_argument("simulate: refractory must be >= 0");

  EventStream stream;
  stream.width = width;
  stream.height = height;
  stream.thresholds = thresholds;

  std::vector<std::vector<Event>> per_row(height);
  const unsigned n_threads = std::max(1u, std::thread::hardware_concurrency());
  std::vector<std::thread> workers;
  std::atomic<int> next_row{0};
  auto work = [&]() {
    for (;;) {
      const int py = next_row.fetch_add(1);
      if (py >= height) return;
      std::vector<Event>& out = per_row[py];
      for (int px = 0; px < width; ++px) {
        double ref = log_radiance_grid(px, py, 0);
        double prev_val = ref;
        double prev_t = t_start;
        double last_emit = -1e300;
        double pixel_t_prev = t_start;
        for (int k = 1; k <= n_steps; ++k) {
          const double cur_t = t_start + dt * k;
          const double cur_val = log_radiance_grid(px, py, k);
          const double slope = (cur_val - prev_val) / dt;
          // Emit every crossing inside this linear segment, in time order.
          for (;;) {
            double level, t_cross;
            std::int8_t pol;
            if (cur_val - ref >= thresholds.c_pos) {
              pol = 1;
              level = ref + thresholds.c_pos;
            } else if (cur_val - ref <= -thresholds.c_neg) {
              pol = -1;
              level = ref - thresholds.c_neg;
            } else {
              break;
            }
            t_cross = (std::fabs(slope) > 1e-300)
                          ? prev_t + (level - prev_val) / slope
                          : cur_t;
            t_cross = std::min(std::max(t_cross, prev_t), cur_t);
            ref = level;
            if (t_cross - last_emit >= refractory) {
              out.push_back({static_cast<std::uint16_t>(px),
                             static_cast<std::uint16_t>(py), pol,
                             pixel_t_prev, t_cross});
              pixel_t_prev = t_cross;
              last_emit = t_cross;
            }
          }
          prev_val = cur_val;
          prev_t = cur_t;
        }
      }
    }
  };
  for (unsigned i = 0; i < n_threads; ++i) workers.emplace_back(work);
  for (auto& w : workers) w.join();

  for (auto& row : per_row)
    stream.events.insert(stream.events.end(), row.begin(), row.end());
  std::stable_sort(stream.events.begin(), stream.events.end(),
                   [](const Event& a, const Event& b) {
                     if (a.t_curr != b.t_curr) return a.t_curr < b.t_curr;
                     if (a.y != b.y) return a.y < b.y;
                     return a.x < b.x;
                   });
  return stream;
}

// Convenience wrapper: simulate from the analytic scene oracle over the
// trajectory span. Poses are interpolated once per grid step and shared by
// all pixels.
inline EventStream simulate(const AnalyticScene& scene, const Camera& camera,
                            const Trajectory& traj,
                            const ContrastThresholds& thresholds,
                            double refractory, double dt) {
  const double t0 = traj.t_begin();
  const int n_steps = static_cast<int>(std::floor((traj.t_end() - t0) / dt + 1e-9));
  std::vector<Pose> poses(n_steps + 1);
  for (int k = 0; k <= n_steps; ++k) poses[k] = traj.interpolate(t0 + dt * k);
  auto grid = [&](int px, int py, int step) {
    return pixel_log_radiance(scene, camera, poses[step], px, py);
  };
  return simulate_events(grid, camera.width, camera.height, t0, dt, n_steps,
                         thresholds, refractory);
}

// Sum of p * C^p over one pixel's events with t_curr in (t_a, t_b].
inline double integrate(const EventStream& stream, int px, int py, double t_a,
                        double t_b) {
  if (!(t_a < t_b)) throw std::invalid_argument("integrate: need t_a < t_b");
  double acc = 0.0;
  for (const Event& e : stream.events) {
    if (e.x != px || e.y != py) continue;
    if (e.t_curr > t_a && e.t_curr <= t_b)
      acc += (e.polarity > 0 ? stream.thresholds.c_pos : -stream.thresholds.c_neg);
  }
  return acc;
}

// ---------------------------------------------------------------------------
// Binary codec.
// ---------------------------------------------------------------------------
namespace detail {
template <class T>
void put(std::vector<std::uint8_t>& buf, T v) {
  std::uint8_t raw[sizeof(T)];
  std::memcpy(raw, &v, sizeof(T));
  buf.insert(buf.end(), raw, raw + sizeof(T));
}
template <class T>
T get(const std::vector<std::uint8_t>& buf, std::size_t& off) {
  if (off + sizeof(T) > buf.size())
    throw std::runtime_error("event decode: truncated input at byte offset " +
                             std::to_string(off));
  T v;
  std::memcpy(&v, buf.data() + off, sizeof(T));
  off += sizeof(T);
  return v;
}
inline std::uint64_t to_ns(double seconds) {
  return static_cast<std::uint64_t>(std::llround(seconds * 1e9));
}
}  // namespace detail

constexpr std::uint32_t kEventFileVersion = 1;

inline std::vector<std::uint8_t> encode(const EventStream& stream) {
  std::vector<std::uint8_t> buf;
  buf.reserve(20 + stream.events.size() * 21);
  buf.insert(buf.end(), {'E', 'V', 'N', 'F'});
  detail::put<std::uint32_t>(buf, kEventFileVersion);
  detail::put<std::uint16_t>(buf, static_cast<std::uint16_t>(stream.width));
  detail::put<std::uint16_t>(buf, static_cast<std::uint16_t>(stream.height));
  detail::put<float>(buf, static_cast<float>(stream.thresholds.c_pos));
  detail::put<float>(buf, static_cast<float>(stream.thresholds.c_neg));
  for (const Event& e : stream.events) {
    detail::put<std::uint64_t>(buf, detail::to_ns(e.t_curr));
    detail::put<std::uint64_t>(buf, detail::to_ns(e.t_prev));
    detail::put<std::uint16_t>(buf, e.x);
    detail::put<std::uint16_t>(buf, e.y);
    detail::put<std::int8_t>(buf, e.polarity);
  }
  return buf;
}

inline EventStream decode(const std::vector<std::uint8_t>& buf) {
  std::size_t off = 0;
  if (buf.size() < 20 || buf[0] != 'E' || buf[1] != 'V' || buf[2] != 'N' || buf[3] != 'F')
    throw std::runtime_error("event decode: bad magic at byte offset 0");
  off = 4;
  const auto version = detail::get<std::uint32_t>(buf, off);
  if (version != kEventFileVersion)
    throw std::runtime_error("event decode: unsupported version " + std::to_string(version));
  EventStream stream;
  stream.width = detail::get<std::uint16_t>(buf, off);
  stream.height = detail::get<std::uint16_t>(buf, off);
  stream.thresholds.c_pos = detail::get<float>(buf, off);
  stream.thresholds.c_neg = detail::get<float>(buf, off);
  if ((buf.size() - off) % 21 != 0)
    throw std::runtime_error("event decode: trailing garbage at byte offset " +
                             std::to_string(off + ((buf.size() - off) / 21) * 21));
  while (off < buf.size()) {
    Event e;
    e.t_curr = static_cast<double>(detail::get<std::uint64_t>(buf, off)) * 1e-9;
    e.t_prev = static_cast<double>(detail::get<std::uint64_t>(buf, off)) * 1e-9;
    e.x = detail::get<std::uint16_t>(buf, off);
    e.y = detail::get<std::uint16_t>(buf, off);
    e.polarity = detail::get<std::int8_t>(buf, off);
    stream.events.push_back(e);
  }
  return stream;
}

inline void save_events(const EventStream& stream, const std::string& path) {
  const auto buf = encode(stream);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write event file: " + path);
  out.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size()));
}

inline EventStream load_events(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read event file: " + path);
  std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(in)),
                                std::istreambuf_iterator<char>());
  return decode(buf);
}

}  // namespace evrf
