//! Bundled background-description corpus for the three background themes.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Theme {
    Seasonal,
    Sky,
    NaturalLandscape,
}

impl Theme {
    pub const ALL: [Theme; 3] = [Theme::Seasonal, Theme::Sky, Theme::NaturalLandscape];

    pub fn as_str(&self) -> &'static str {
        match self {
            Theme::Seasonal => "seasonal",
            Theme::Sky => "sky",
            Theme::NaturalLandscape => "natural-landscape",
        }
    }

    fn focus(&self) -> &'static str {
        match self {
            Theme::Seasonal => "seasonal scenery with clear seasonal cues",
            Theme::Sky => "the sky and atmosphere",
            Theme::NaturalLandscape => "natural landscapes",
        }
    }
}

impl fmt::Display for Theme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Theme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "seasonal" => Ok(Theme::Seasonal),
            "sky" => Ok(Theme::Sky),
            "natural-landscape" | "naturallandscape" | "landscape" => Ok(Theme::NaturalLandscape),
            other => Err(format!("unknown theme {other:?}")),
        }
    }
}

/// Instruction sent to a language-model endpoint to obtain `count`
/// background descriptions for `theme`.
pub fn expansion_instruction(theme: Theme, count: usize) -> String {
    format!(
        "Generate a list of {count} diverse prompts for background image generation, \
         focusing on {}. Provide varied descriptions covering different times of day, \
         weather conditions, and visual elements. The prompts should be clear, creative, \
         and specific for use in diffusion models. Return one prompt per line, numbered.",
        theme.focus()
    )
}

const SEED_SEASONAL: &[&str] = &[
    "A vibrant spring meadow with tall grass and colorful wildflowers, where bees and butterflies flit from bloom to bloom under the warm sun.",
    "A frozen river cutting through a snowy valley, with ice floes floating on the surface and snow-capped trees lining the banks.",
    "A golden autumn forest at sunset, with leaves in shades of red and orange covering the ground and a crisp chill in the air.",
    "A cherry blossom grove in full bloom, with pink petals floating on a gentle breeze and covering a quiet pathway.",
];

const SEED_SKY: &[&str] = &[
    "A stormy summer beach scene with dark clouds overhead, waves crashing against the shore, and seagulls fighting the strong winds.",
    "A panoramic view of rolling hills under a twilight sky, with the first stars appearing and a crescent moon rising.",
    "A northern lights display over a frozen lake, with vibrant green and purple streaks reflected in the icy surface.",
];

const SEED_LANDSCAPE: &[&str] = &[
    "A tropical waterfall plunging down into a crystal-clear pool, surrounded by dense jungle and mist rising from the water below.",
    "A misty morning in a bamboo forest, with soft sunlight filtering through the tall green stalks and dew on the leaves.",
    "A desert oasis at high noon, with palm trees surrounding a small pool of water and heat waves distorting the distant horizon.",
];

const SUBJECTS_SEASONAL: &[&str] = &[
    "a snow-covered pine forest",
    "a blooming tulip field",
    "a maple-lined country road in autumn",
    "a sunflower field in midsummer",
    "a frosted orchard in early winter",
    "a spring hillside of fresh green grass",
    "a pumpkin patch beside a harvested cornfield",
    "a lake shore with melting spring ice",
    "a birch grove with yellow autumn leaves",
    "a lavender field at the height of summer",
    "a snowy mountain village meadow",
    "a riverbank carpeted with fallen autumn leaves",
    "an apple orchard in white spring blossom",
    "a wheat field ripening in late summer",
    "a frozen pond surrounded by bare winter trees",
    "a park path under blossoming magnolias",
    "a vineyard in autumn colors",
    "a summer meadow full of poppies",
    "a winter forest clearing after fresh snowfall",
    "a rice terrace in early spring",
    "a hillside of red autumn heather",
    "a coastal dune with summer beach grass",
    "a valley of larches turning gold",
    "a hedge-lined field in late spring",
    "an icy waterfall in deep winter",
    "a hayfield with round bales in late summer",
    "a forest floor of spring bluebells",
    "a quiet lakeside in autumn fog",
    "a snow-dusted prairie",
    "a garden of summer hydrangeas",
];

const SUBJECTS_SKY: &[&str] = &[
    "a wide sky of towering cumulus clouds",
    "a clear blue sky with thin cirrus streaks",
    "a fiery sunset sky over a flat horizon",
    "a starry night sky with the milky way",
    "a dramatic thunderstorm sky with distant lightning",
    "a pastel sunrise sky with soft pink clouds",
    "an overcast sky of layered grey clouds",
    "a full moon rising in a deep blue sky",
    "an aurora shimmering across the polar sky",
    "a hazy golden-hour sky over open plains",
    "a sky of mackerel clouds at dusk",
    "a double rainbow arching across a rain-washed sky",
    "a crimson twilight sky over calm water",
    "a sky filled with drifting altocumulus clouds",
    "a stormy sky with rolling shelf clouds",
    "a moonlit sky with scattered silver clouds",
    "a sky of noctilucent clouds after sunset",
    "a bright midday sky above rolling dunes",
    "a sky with sun rays breaking through clouds",
    "a violet evening sky with the first stars",
    "a misty dawn sky above a quiet valley",
    "a sky of lenticular clouds over mountains",
    "a smoky orange sky at the end of the day",
    "a cloudless sky fading from blue to white",
    "a night sky with a crescent moon and planets",
    "a sky streaked with contrails at sunset",
    "a towering anvil cloud in a summer sky",
    "a soft grey drizzle sky over the sea",
    "a sky glowing with red and purple afterglow",
    "a wind-swept sky of fast moving clouds",
];

const SUBJECTS_LANDSCAPE: &[&str] = &[
    "a mountain range with jagged snowy peaks",
    "a calm alpine lake mirroring the mountains",
    "a rolling green valley with a winding river",
    "a red sandstone canyon",
    "a rugged sea cliff above crashing waves",
    "a vast savanna dotted with acacia trees",
    "a dense rainforest canopy",
    "a volcanic plain of black rock",
    "a sweeping sand dune desert",
    "a glacier tongue flowing into a fjord",
    "a wildflower prairie stretching to the horizon",
    "a mossy boulder field in a highland glen",
    "a limestone karst landscape with tall pinnacles",
    "a tidal salt marsh with meandering creeks",
    "a quiet birch and spruce taiga",
    "a terraced hillside of tea plantations",
    "a wide river delta with sandbars",
    "a high-altitude plateau of golden grass",
    "a turquoise lagoon behind a coral reef",
    "a basalt column coastline",
    "a steep gorge with a rushing river",
    "an open tundra with low shrubs",
    "a rocky coastline with tide pools",
    "a moorland covered in heather",
    "a badlands landscape of striped hills",
    "a meandering stream through a pine forest",
    "a crater lake ringed by forested slopes",
    "a field of lava rock with steam vents",
    "a mangrove shoreline at low tide",
    "a granite dome rising above a forest",
];

const TIMES: &[&str] = &[
    "at dawn",
    "in the early morning",
    "at mid-morning",
    "at high noon",
    "in the afternoon",
    "at golden hour",
    "at sunset",
    "at dusk",
    "at twilight",
    "under moonlight",
    "before a storm",
    "just after rain",
];

const DETAILS: &[&str] = &[
    "with soft diffused light and no people or objects in view",
    "with long shadows and warm tones",
    "with light fog softening the distance",
    "with crisp clear air and vivid colors",
    "with gentle wind moving the vegetation",
    "with scattered clouds casting shade",
    "with a light drizzle in the air",
    "with cool blue tones and calm stillness",
    "with hazy atmosphere and muted colors",
    "with bright sunlight and strong contrast",
    "with drifting mist near the ground",
    "with a wide panoramic view and empty foreground",
];

/// The bundled corpus for `theme` in a fixed order: the hand-written seed
/// descriptions first, then templated subject/time/detail combinations.
pub fn static_corpus(theme: Theme) -> impl Iterator<Item = String> {
    let (seeds, subjects) = match theme {
        Theme::Seasonal => (SEED_SEASONAL, SUBJECTS_SEASONAL),
        Theme::Sky => (SEED_SKY, SUBJECTS_SKY),
        Theme::NaturalLandscape => (SEED_LANDSCAPE, SUBJECTS_LANDSCAPE),
    };
    let s = subjects.len();
    let t = TIMES.len();
    let templated = (0..s * t * DETAILS.len()).map(move |i| {
        let subject = subjects[i % s];
        let time = TIMES[(i / s) % t];
        let detail = DETAILS[(i / (s * t)) % DETAILS.len()];
        let mut text = format!("{subject} {time}, {detail}.");
        text[..1].make_ascii_uppercase();
        text
    });
    seeds.iter().map(|s| s.to_string()).chain(templated)
}

pub fn static_corpus_len(theme: Theme) -> usize {
    let (seeds, subjects) = match theme {
        Theme::Seasonal => (SEED_SEASONAL.len(), SUBJECTS_SEASONAL.len()),
        Theme::Sky => (SEED_SKY.len(), SUBJECTS_SKY.len()),
        Theme::NaturalLandscape => (SEED_LANDSCAPE.len(), SUBJECTS_LANDSCAPE.len()),
    };
    seeds + subjects * TIMES.len() * DETAILS.len()
}
