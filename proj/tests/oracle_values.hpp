#pragma once

// Generated by tests/oracles/derive.py. Do not edit by hand.

#include <array>
#include <cstdint>

namespace oracle {

inline constexpr int kPitch333x16 = 5376;
inline constexpr int kSrgbHalf = 188;
inline constexpr std::array<double, 9> kSrgbInputs{0.0, 0.001, 0.0031308, 0.01, 0.2, 0.5, 0.75, 0.99, 1.0};
inline constexpr std::array<double, 9> kSrgbExpected{0.0, 3.0, 10.0, 25.0, 124.0, 188.0, 225.0, 254.0, 255.0};
inline constexpr std::uint64_t kChecksum2x1 = 0x355029d069ebe94fULL;
inline constexpr const char* kTokenOracle = "eyJ0cmFuc3BvcnQiOiJzaGFyZWRfbWVtb3J5IiwibmFtZSI6Ii9zcGxhdGJ1cy1vcmFjbGUiLCJsYXlvdXRfdmVyc2lvbiI6MSwidG90YWxfYnl0ZXMiOjEyMjg4fQ==";
inline constexpr double kFocal64 = 55.42562584220408;
inline constexpr double kIsoCovDiag = 7.980000000000002;
inline constexpr std::array<double, 4> kAnisoCov{5.764700298776261, 1.6889553055865996, 1.6889553055865991, 2.8006849278227985};
inline constexpr std::array<double, 2> kAnisoCenter{38.65107510106449, 27.565949932623674};
inline constexpr double kSingleNeighbourAlpha = 0.7514127385351077;
inline constexpr double kTwoAlpha = 0.8;
inline constexpr double kTwoRed = 0.6;
inline constexpr double kTwoGreen = 0.2;
inline constexpr double kTwoInvDepth = 0.7;
inline constexpr std::array<double, 16> kUnityPoseW2C{0.7263157894736842, -0.31578947368421056, 0.6105263157894737, -3.1894736842105265, 0.4421052631578947, 0.8947368421052632, -0.06315789473684214, 1.536842105263158, -0.5263157894736842, 0.3157894736842105, 0.7894736842105263, -1.2105263157894737, 0.0, 0.0, 0.0, 1.0};
inline constexpr int kPgmHalf = 32768;

} // namespace oracle
