use serde::{Deserialize, Serialize};

use crate::domain::ImageRef;
use crate::error::Result;
use crate::gateway::{Gateway, TemplateId, TemplateSet};
use crate::knowledge_filter::VisualDetails;

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CaptionSet {
    pub captions: Vec<String>,
    pub empty: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VisualContext {
    pub captions: CaptionSet,
    pub details: VisualDetails,
    pub rendered: String,
}

pub fn caption_image(gateway: &Gateway, templates: &TemplateSet, image: &ImageRef) -> Result<CaptionSet> {
    let prompt = templates.render(TemplateId::Caption, &[])?;
    let reply = gateway.complete_chat(&prompt, Some(image), false)?;
    Ok(parse_captions(&reply.text))
}

pub fn parse_captions(reply: &str) -> CaptionSet {
    let captions: Vec<String> = reply
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect();
    CaptionSet {
        empty: captions.is_empty(),
        captions,
    }
}

/// Caption lines, a blank line, then the details; empty parts leave no separator behind.
pub fn build_visual_context(captions: CaptionSet, details: VisualDetails) -> VisualContext {
    let caption_block = captions.captions.join("\n");
    let rendered = match (caption_block.is_empty(), details.text.is_empty()) {
        (false, false) => format!("{caption_block}\n\n{}", details.text),
        (false, true) => caption_block,
        (true, _) => details.text.clone(),
    };
    VisualContext {
        captions,
        details,
        rendered,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{MockRule, MockScript};

    fn details(t: &str) -> VisualDetails {
        VisualDetails {
            text: t.into(),
            empty: t.is_empty(),
        }
    }

    #[test]
    fn rendering_rules() {
        let caps = parse_captions("a park");
        assert_eq!(build_visual_context(caps.clone(), details("falling leaves")).rendered, "a park\n\nfalling leaves");
        assert_eq!(build_visual_context(caps, details("")).rendered, "a park");
        assert_eq!(build_visual_context(parse_captions(""), details("falling leaves")).rendered, "falling leaves");
        assert_eq!(build_visual_context(parse_captions("a\n\nb"), details("")).rendered, "a\nb");
    }

    #[test]
    fn captions_from_vision_backend() {
        let script = MockScript::new(vec![
            MockRule::text("Describe this image", "a park with trees losing their leaves").with_image("park.jpg"),
            MockRule::text("Describe this image", "a red bus\n\na city street\n").with_image("bus.jpg"),
            MockRule::text("Describe this image", "  ").with_image("blank.jpg"),
        ])
        .unwrap();
        let gw = Gateway::mock(script).build();
        let t = TemplateSet::default();
        assert_eq!(
            caption_image(&gw, &t, &"park.jpg".into()).unwrap().captions,
            ["a park with trees losing their leaves"]
        );
        assert_eq!(caption_image(&gw, &t, &"bus.jpg".into()).unwrap().captions.len(), 2);
        let blank = caption_image(&gw, &t, &"blank.jpg".into()).unwrap();
        assert!(blank.empty && blank.captions.is_empty());
    }
}
