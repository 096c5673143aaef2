// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace xsyn {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed input file or payload (JSON, XTEN, PNG, base64).
class ParseError : public Error {
public:
    using Error::Error;
};

/// A dataset record references something that does not exist or violates a type invariant.
class IntegrityError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class DimensionError : public Error {
public:
    using Error::Error;
};

/// No annotation survived small-box filtering, so there is nothing to regenerate.
class NoForeground : public Error {
public:
    NoForeground() : Error("NoForeground: no annotations left after small-box filtering") {}
};

/// Segment-everything produced no admissible placement for a new item.
class NoIdleRegion : public Error {
public:
    NoIdleRegion() : Error("NoIdleRegion: no candidate region satisfies the placement criterion") {}
};

class NumericalError : public Error {
public:
    NumericalError(int step, const std::string& what)
        : Error("non-finite latent at step " + std::to_string(step) + ": " + what), m_step(step) {}
    int step() const { return m_step; }

private:
    int m_step;
};

/// Failure talking to a denoiser/codec/segmenter backend.
class BackendError : public Error {
public:
    enum class Kind { Transport, Protocol, Version, Remote };

    BackendError(Kind kind, std::string code, const std::string& message)
        : Error(code + ": " + message), m_kind(kind), m_code(std::move(code)) {}

    Kind kind() const { return m_kind; }
    const std::string& code() const { return m_code; }

private:
    Kind m_kind;
    std::string m_code;
};

}  // namespace xsyn
