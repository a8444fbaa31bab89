#pragma once

#include "spamguard/bayes.hpp"
#include "spamguard/config.hpp"
#include "spamguard/content_filters.hpp"
#include "spamguard/corpus.hpp"
#include "spamguard/error.hpp"
#include "spamguard/experiments.hpp"
#include "spamguard/lookup.hpp"
#include "spamguard/message.hpp"
#include "spamguard/pipeline.hpp"
#include "spamguard/random.hpp"
#include "spamguard/report.hpp"
#include "spamguard/scenario.hpp"
#include "spamguard/simulator.hpp"
#include "spamguard/source_filters.hpp"
