use std::fmt;

use super::scene::{Color, SceneSpec, Shape};
use super::CorpusError;

/// The closed set of question templates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Question {
    /// "how many red items ?"
    CountColor(Color),
    /// "how many circles ?"
    CountShape(Shape),
    /// "are there more circles than squares ?" (strict; ties answer "no")
    MoreThan(Shape, Shape),
    /// "is there a red square ?"
    Exists(Color, Shape),
}

impl Question {
    pub fn parse(text: &str) -> Result<Self, CorpusError> {
        let w: Vec<&str> = text.split_whitespace().collect();
        let bad = || CorpusError::UnknownTemplate(text.to_string());
        match w.as_slice() {
            ["how", "many", c, "items", "?"] => Color::from_word(c).map(Question::CountColor).ok_or_else(bad),
            ["how", "many", s, "?"] => Shape::from_plural(s).map(Question::CountShape).ok_or_else(bad),
            ["are", "there", "more", a, "than", b, "?"] => Shape::from_plural(a)
                .zip(Shape::from_plural(b))
                .filter(|(a, b)| a != b)
                .map(|(a, b)| Question::MoreThan(a, b))
                .ok_or_else(bad),
            ["is", "there", "a", c, s, "?"] => Color::from_word(c)
                .zip(Shape::from_word(s))
                .map(|(c, s)| Question::Exists(c, s))
                .ok_or_else(bad),
            _ => Err(bad()),
        }
    }
}

impl fmt::Display for Question {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Question::CountColor(c) => write!(f, "how many {} items ?", c.word()),
            Question::CountShape(s) => write!(f, "how many {} ?", s.plural()),
            Question::MoreThan(a, b) => write!(f, "are there more {} than {} ?", a.plural(), b.plural()),
            Question::Exists(c, s) => write!(f, "is there a {} {} ?", c.word(), s.word()),
        }
    }
}

fn yes_no(b: bool) -> String {
    if b { "yes" } else { "no" }.to_string()
}

/// Ground-truth answer by enumeration over the scene's objects.
pub fn answer(spec: &SceneSpec, q: Question) -> String {
    match q {
        Question::CountColor(c) => spec.objects.iter().filter(|o| o.color == c).count().to_string(),
        Question::CountShape(s) => spec.objects.iter().filter(|o| o.shape == s).count().to_string(),
        Question::MoreThan(a, b) => {
            let na = spec.objects.iter().filter(|o| o.shape == a).count();
            let nb = spec.objects.iter().filter(|o| o.shape == b).count();
            yes_no(na > nb)
        }
        Question::Exists(c, s) => yes_no(spec.objects.iter().any(|o| o.color == c && o.shape == s)),
    }
}

pub fn oracle_answer(spec: &SceneSpec, question: &str) -> Result<String, CorpusError> {
    Ok(answer(spec, Question::parse(question)?))
}
