//! Synthetic corpora for the benchmarks.

use lexlab_core::numerals::render_chinese_numeral;
use lexlab_core::{Article, ArticleIndex};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const VOCAB: &[&str] = &[
    "婚姻", "登记", "离婚", "子女", "抚养", "财产", "共同", "继承", "遗产", "收养", "合同", "违约", "赔偿", "损失", "侵权", "责任",
    "盗窃", "抢劫", "诈骗", "数额", "较大", "有期徒刑", "拘役", "罚金", "国家", "工作人员", "职务", "便利", "利益", "公共", "安全", "当事人",
];

/// `n` articles of 20-60 vocabulary words each, deterministic for `seed`.
pub fn synthetic_index(n: usize, seed: u64) -> ArticleIndex {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let articles = (0..n)
        .map(|i| {
            let len = 20 + (i * 7919) % 41;
            let text: String = (0..len).map(|_| *VOCAB.choose(&mut rng).unwrap()).collect::<Vec<_>>().join("，");
            Article {
                law_title: if i % 2 == 0 { "民法典".into() } else { "刑法".into() },
                article_no: (i / 2 + 1) as u32,
                paragraph_no: None,
                text,
                source_id: String::new(),
            }
        })
        .collect();
    ArticleIndex::from_articles(articles, Default::default()).expect("synthetic corpus is valid")
}

/// A response citing `n` articles, half of them real.
pub fn synthetic_response(n: usize) -> String {
    (0..n)
        .map(|i| {
            let no = if i % 2 == 0 { i as u32 + 1 } else { 9000 + i as u32 };
            format!("根据《民法典》第{}条规定，婚姻登记子女抚养财产共同。", render_chinese_numeral(no))
        })
        .collect()
}
