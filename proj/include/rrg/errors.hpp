#pragma once

#include <stdexcept>
#include <string>

namespace rrg {

/// Invalid configuration value. The message names the offending field.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& field, const std::string& what)
      : std::runtime_error("config error [" + field + "]: " + what), field_(field) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

/// NaN/Inf encountered in a loss, ratio, or gradient block.
class NumericalError : public std::runtime_error {
 public:
  NumericalError(const std::string& where, const std::string& what)
      : std::runtime_error("numerical failure [" + where + "]: " + what), where_(where) {}
  const std::string& where() const { return where_; }

 private:
  std::string where_;
};

class GroupSizeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// An operation was invoked before the group-level step it depends on.
class SequencingError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Checkpoint, corpus or vocabulary file could not be read or does not match.
class LoadError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace rrg

namespace rrg {

/// A training component failed; carries where in the stage loop it happened.
class TrainingError : public std::runtime_error {
 public:
  TrainingError(int stage, long step, const std::string& what)
      : std::runtime_error("training failed at stage " + std::to_string(stage) + ", step " + std::to_string(step) +
                           ": " + what),
        stage_(stage),
        step_(step) {}
  int stage() const { return stage_; }
  long step() const { return step_; }

 private:
  int stage_;
  long step_;
};

}  // namespace rrg
