#pragma once

namespace hybridep::units {

// Canonical internal units are bytes and seconds. Config files speak
// MB / Gbps / ms; conversions are pinned here so they are exact and
// identical everywhere.
inline constexpr double kBytesPerMB = 1e6;
inline constexpr double kBytesPerSecPerGbps = 1.25e8;
inline constexpr double kSecondsPerMs = 1e-3;

inline double mb_to_bytes(double mb) { return mb * kBytesPerMB; }
inline double bytes_to_mb(double b) { return b / kBytesPerMB; }
inline double gbps_to_bytes_per_sec(double gbps) { return gbps * kBytesPerSecPerGbps; }
inline double ms_to_seconds(double ms) { return ms * kSecondsPerMs; }
inline double seconds_to_ms(double s) { return s / kSecondsPerMs; }

}  // namespace hybridep::units
