@problemName MultiToy
@dimensions 3
@classLabel true x y
@data
0,1,2,3:4,5,6,7:8,9,10,11:x
1,1,1,1:2,2,2,2:3,3,3,3:y
0,2,4,6:1,3,5,7:2,4,6,8:x
