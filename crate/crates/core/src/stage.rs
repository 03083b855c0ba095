use core::fmt;
use core::str::FromStr;

/// The five AASM sleep stages, with stable integer codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[repr(u8)]
pub enum SleepStage {
    W = 0,
    N1 = 1,
    N2 = 2,
    N3 = 3,
    Rem = 4,
}

impl SleepStage {
    pub const COUNT: usize = 5;
    pub const ALL: [SleepStage; 5] = [Self::W, Self::N1, Self::N2, Self::N3, Self::Rem];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::W => "W",
            Self::N1 => "N1",
            Self::N2 => "N2",
            Self::N3 => "N3",
            Self::Rem => "REM",
        }
    }
}

impl fmt::Display for SleepStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SleepStage {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        Self::ALL
            .into_iter()
            .find(|st| st.name().eq_ignore_ascii_case(s))
            .ok_or(())
    }
}

/// Index of the largest logit; ties go to the lower stage code.
pub fn argmax_stage(logits: &[f64]) -> SleepStage {
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate().take(SleepStage::COUNT) {
        if v > logits[best] {
            best = i;
        }
    }
    SleepStage::ALL[best]
}
