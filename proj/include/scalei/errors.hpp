#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace scalei {

// Graph-shape problems: cycles, out-of-range parents, size mismatches.
class StructuralError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Inputs outside an operation's mathematical domain.
class DomainError : public std::domain_error {
public:
  using std::domain_error::domain_error;
};

// Score-variation minimization could not produce a change matrix consistent
// with an atomic-intervention DAG model.
class IdentifiabilityFailure : public std::runtime_error {
public:
  IdentifiabilityFailure(const std::string& what, std::vector<int> environments)
      : std::runtime_error(what), environments_(std::move(environments)) {}

  const std::vector<int>& environments() const noexcept { return environments_; }

private:
  std::vector<int> environments_;
};

// Hard-intervention unmixing left a surrounded pair dependent.
class RefinementFailure : public std::runtime_error {
public:
  RefinementFailure(const std::string& what, int node, int surrounding)
      : std::runtime_error(what), node_(node), surrounding_(surrounding) {}

  int node() const noexcept { return node_; }
  int surrounding() const noexcept { return surrounding_; }

private:
  int node_;
  int surrounding_;
};

}  // namespace scalei
