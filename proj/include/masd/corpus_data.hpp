// Copyright 2026 The MASD Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Generated from data/corpus.csv; keep the two in sync.

namespace masd {

inline constexpr const char* kDefaultCorpusCsv = R"csv(word,tone,initial,initial8,final,final_class
飘,T1,p,I1,iao,F2
方,T1,f,I2,ang,F1
丢,T1,d,I4,iu,F2
他,T1,t,I4,a,F1
天,T1,t,I4,ian,F2
光,T1,g,I7,uang,F3
均,T1,j,I6,vn,F4
缺,T1,q,I6,ve,F4
出,T1,ch,I5,u,F3
说,T1,sh,I5,uo,F3
扔,T1,r,I5,eng,F1
三,T1,s,I3,an,F1
没,T2,m,I1,ei,F1
明,T2,m,I1,ing,F2
年,T2,n,I4,ian,F2
结,T2,j,I6,ie,F2
穷,T2,q,I6,iong,F2
床,T2,ch,I5,uang,F3
人,T2,r,I5,en,F1
昨,T2,z,I3,uo,F3
从,T2,c,I3,ong,F1
才,T2,c,I3,ai,F1
随,T2,s,I3,ui,F3
而,T2,-,I8,er,F1
把,T3,b,I1,a,F1
品,T3,p,I1,in,F2
你,T3,n,I4,i,F2
旅,T3,l,I4,v,F4
两,T3,l,I4,iang,F2
缓,T3,h,I7,uan,F3
选,T3,x,I6,van,F4
准,T3,zh,I5,un,F3
早,T3,z,I3,ao,F1
有,T3,y,I8,ou,F2
我,T3,w,I8,o,F3
耳,T3,-,I8,er,F1
不,T4,b,I1,u,F3
费,T4,f,I2,ei,F1
第,T4,d,I4,i,F2
个,T4,g,I7,e,F1
看,T4,k,I7,an,F1
快,T4,k,I7,uai,F3
话,T4,h,I7,ua,F3
下,T4,x,I6,ia,F2
这,T4,zh,I5,e,F1
上,T4,sh,I5,ang,F1
要,T4,y,I8,ao,F2
问,T4,w,I8,en,F3
)csv";

}  // namespace masd
