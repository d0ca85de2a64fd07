#pragma once

// Umbrella header. remote_backend.hpp pulls in cpp-httplib and is left out;
// include it directly when the HTTP backend is needed.

#include "biosep/audio_io.hpp"
#include "biosep/config.hpp"
#include "biosep/error.hpp"
#include "biosep/features.hpp"
#include "biosep/interpret.hpp"
#include "biosep/nmf.hpp"
#include "biosep/plotdata.hpp"
#include "biosep/separation.hpp"
#include "biosep/synth.hpp"
#include "biosep/timefreq.hpp"
