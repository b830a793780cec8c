#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "b2t/layout.hpp"
#include "b2t/linalg.hpp"

namespace b2t {

// One cue class. `text` is the prompt as displayed; targets for the silent
// "rest" class use an empty transcript (see transcript()).
struct WordLabel {
  int id = 0;
  std::string text;
};

// the 13 default classes, id == position
const std::vector<WordLabel>& word_table();

// training/evaluation transcript for a label: the text itself, except "rest",
// which maps to the empty string
std::string transcript(const WordLabel& label);

// cue onset, in samples at the recording's rate
struct Event {
  std::size_t sample = 0;
  int label = 0;
};

// Multichannel EEG block: data is channels x samples in microvolts.
struct Recording {
  int subject = 0;
  double fs_hz = 0.0;
  ChannelLayout layout;
  Matrix data;
  std::vector<Event> events;

  std::size_t n_channels() const { return data.rows(); }
  std::size_t n_samples() const { return data.cols(); }
};

}  // namespace b2t
