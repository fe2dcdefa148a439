# small univariate classification fixture
@problemName UniToy
@univariate true
@classLabel true a b
@data
0.0,0.5,1.0,1.5,2.0,2.5,3.0,3.5:a
3.5,3.0,2.5,2.0,1.5,1.0,0.5,0.0:b
