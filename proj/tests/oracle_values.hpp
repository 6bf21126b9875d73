#pragma once

// Generated by tests/oracles/oracle_values.py. Do not edit by hand.

namespace oracle {

// losses
inline constexpr double kDLossHalf = 1.3862943611198906;
inline constexpr double kDLossMixed = 0.5798184952529422;
inline constexpr double kGLossNonSaturatingHalf = 0.6931471805599453;
inline constexpr double kGLossSaturatingHalf = -0.6931471805599453;
inline constexpr double kCycleShiftCt = 0.1;
inline constexpr double kCycleBothOff = 0.1;
inline constexpr double kCeUniform5 = 1.6094379124340998;
inline constexpr double kCeQuarter = 1.3862943611198906;
inline constexpr double kDiceUniformAllOne = 0.9333330763889673;
inline constexpr double kDiceHardWrong = 0.3999999750000016;
inline constexpr double kSegUniformAllOne = 2.542770988823067;
inline constexpr double kGeneratorTotalExample = 4.4;
inline constexpr double kLogitPoint8 = 1.3862943611198908;
inline constexpr double kLogitPoint3 = -0.8472978603872036;

// networks
inline constexpr long long kGeneratorParamsDefaultC5 = 7697539;
inline constexpr long long kSegmentorParamsDefaultC5 = 7694789;
inline constexpr long long kDiscriminatorParamsDefault = 2763841;
inline constexpr long long kGeneratorParamsMiniC2 = 30271;
inline constexpr long long kSegmentorParamsMiniC2 = 30194;
inline constexpr long long kDiscriminatorParamsMini = 837;
inline constexpr long long kDiscOut256 = 30;
inline constexpr long long kDiscOut64 = 6;
inline constexpr long long kDiscOut24 = 1;

// schedule
inline constexpr double kLrEpoch1 = 0.0002;
inline constexpr double kLrEpoch100 = 0.0002;
inline constexpr double kLrEpoch101 = 0.00019900497512437813;
inline constexpr double kLrEpoch150 = 0.0001502487562189055;
inline constexpr double kLrEpoch200 = 0.00010049751243781096;
inline constexpr double kLrEpoch250 = 5.074626865671641e-05;
inline constexpr double kLrEpoch300 = 9.95024875621886e-07;

// adam
inline constexpr double kAdamQuadraticStep1 = 1.09999999975;
inline constexpr double kAdamQuadraticStep2 = 1.1991139930635568;
inline constexpr double kAdamQuadraticStep3 = 1.2967838963078473;

}  // namespace oracle
