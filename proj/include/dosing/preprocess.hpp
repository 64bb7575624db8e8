#pragma once

#include <array>
#include <span>
#include <vector>

#include "dosing/cohort.hpp"
#include "dosing/nn/tensor.hpp"

namespace dosing {

/// Histogram equalization: each feature is mapped through the empirical CDF of its
/// training values, (#{ref < v} + ½·#{ref = v}) / |ref|. Feature indices are the C
/// continuous observation features followed by vasopressor (C) and IV fluid (C+1).
class Equalizer {
  public:
    static Equalizer fit(const Cohort& train);
    static Equalizer from_references(std::size_t n_continuous, std::vector<std::vector<double>> references);

    double apply(std::size_t feature, double value) const;
    /// Piecewise-linear quantile map: reference value i sits at position (i + ½)/n.
    /// u is clamped to [0, 1] first.
    double inverse(std::size_t feature, double u) const;

    std::size_t n_continuous() const { return n_continuous_; }
    std::size_t n_features() const { return references_.size(); }
    std::size_t vaso_feature() const { return n_continuous_; }
    std::size_t fluid_feature() const { return n_continuous_ + 1; }
    const std::vector<double>& reference(std::size_t feature) const;

  private:
    std::size_t n_continuous_ = 0;
    std::vector<std::vector<double>> references_;
};

/// Per-feature median of observed (unmasked) training values; throws ConfigError for
/// a feature that is never observed.
std::vector<double> feature_medians(const Cohort& train);

/// Missing values take the most recent observed value; values missing before the first
/// observation take the training median. The returned masks are all zero.
std::vector<ObservationVector> impute_sample_and_hold(std::span<const ObservationVector> series,
                                                      std::span<const double> medians);

/// Model-ready view of an admission: equalized + imputed inputs, original missing flags,
/// equalized actions.
struct PreparedAdmission {
    std::vector<std::vector<double>> inputs;   // C equalized continuous + B binary, per step
    std::vector<std::vector<double>> missing;  // C flags per step (1.0 = not measured)
    std::vector<std::array<double, 2>> actions;
    std::vector<DoseAction> raw_actions;
    std::vector<double> rewards;

    std::size_t length() const { return inputs.size(); }
};

class Preprocessor {
  public:
    Preprocessor() = default;
    Preprocessor(Equalizer equalizer, std::vector<double> medians, std::size_t n_binary);

    static Preprocessor fit(const Cohort& train);

    PreparedAdmission prepare(const Admission& admission) const;
    std::array<double, 2> equalize_action(const DoseAction& a) const;
    /// Equalized action → raw dose. Values outside [0,1] are clamped and counted.
    DoseAction raw_action(std::array<double, 2> equalized) const;
    std::vector<double> model_input(const ObservationVector& imputed) const;

    std::size_t n_continuous() const { return equalizer_.n_continuous(); }
    std::size_t n_binary() const { return n_binary_; }
    std::size_t input_width() const { return n_continuous() + n_binary_; }
    const Equalizer& equalizer() const { return equalizer_; }
    const std::vector<double>& medians() const { return medians_; }

    nn::ParamSet to_params() const;
    static Preprocessor from_params(const nn::ParamSet& params);

  private:
    Equalizer equalizer_;
    std::vector<double> medians_;
    std::size_t n_binary_ = 0;
};

/// Online sample-and-hold for one admission replayed step by step.
class ObservationStream {
  public:
    explicit ObservationStream(const Preprocessor& pre);
    /// Returns the model input for this step and updates the held values.
    std::vector<double> push(const ObservationVector& raw);

  private:
    const Preprocessor* pre_;
    std::vector<double> held_;
};

/// Number of equalized actions clamped into [0,1] by Preprocessor::raw_action (process-wide).
std::size_t clamped_action_count();

}  // namespace dosing
