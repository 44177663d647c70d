#pragma once

// Umbrella header: the whole toolkit in one include.
//   asm front end  -> asm_types / asm_tables / asm_parser
//   lifting        -> mail / lift
//   graphs         -> acfg / acfg_match
//   statistics     -> swod
//   detection      -> template_db / detector
//   experiments    -> eval / mutator

#include "acfg.hpp"
#include "acfg_match.hpp"
#include "asm_parser.hpp"
#include "asm_tables.hpp"
#include "asm_types.hpp"
#include "detector.hpp"
#include "errors.hpp"
#include "eval.hpp"
#include "lift.hpp"
#include "mail.hpp"
#include "mutator.hpp"
#include "swod.hpp"
#include "template_db.hpp"
