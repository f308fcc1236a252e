//! Incremental decoding with the KV cache against full recomputation.

use vift::corpus::{gen_composite_eval, prompt_ids};
use vift::lvlm::{Lvlm, ModelConfig};

fn main() {
    let model: Lvlm<f32> = Lvlm::new(ModelConfig::default()).unwrap();
    let r = &gen_composite_eval(1, 0)[0];
    let vis = model.visual_tokens(&r.image).unwrap();
    let mut text = prompt_ids(&r.question).unwrap();
    let n_prompt = text.len();
    text.extend([10, 11, 12, 13, 14]);

    let full = model.forward(&model.assemble_input(Some(&vis), &text).unwrap(), None, false, None).unwrap().logits;
    let mut cache = model.new_cache();
    let pre = model.forward(&model.assemble_input(Some(&vis), &text[..n_prompt]).unwrap(), Some(&mut cache), false, None);
    let n_vis = model.config().n_visual();
    println!("prefill {} positions, max diff {:.2e}", cache.len(), pre.unwrap().logits.max_abs_diff(&full.slice_rows(0, n_vis + n_prompt)));
    for (j, &t) in text[n_prompt..].iter().enumerate() {
        let pos = n_vis + n_prompt + j;
        let step = model.forward(&model.generated_input(t, pos).unwrap(), Some(&mut cache), false, None).unwrap();
        println!("position {pos}: cache {} entries, max diff {:.2e}", cache.len(), step.logits.max_abs_diff(&full.slice_rows(pos, 1)));
    }
}
